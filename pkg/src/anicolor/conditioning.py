"""Conditioning encodings: binary sketches, reference background removal,
integer-labelled point maps, keypoint trajectories and Gaussian heatmaps."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .synthgen import ReferenceImage, round_half_up

logger = logging.getLogger(__name__)

BINARIZE_THRESHOLD = 200
DENSE_MAX_KEYPOINTS = 50
SPARSE_MAX_KEYPOINTS = 5


class ConditioningError(ValueError):
    pass


def binarize(sketch: np.ndarray, threshold: int = BINARIZE_THRESHOLD) -> np.ndarray:
    """Pixels strictly greater than ``threshold`` become 255, all others 0."""
    sketch = np.asarray(sketch)
    return np.where(sketch > threshold, 255, 0).astype(np.uint8)


def augment_background(ref: ReferenceImage, p: float = 0.5, rng: np.random.Generator | None = None) -> ReferenceImage:
    """With probability ``p`` paint everything outside ``ref.fg_mask`` white.

    Exactly one uniform draw is taken from ``rng`` per call, whatever ``p`` is.
    """
    rng = np.random.default_rng() if rng is None else rng
    remove = rng.random() < p
    if not remove:
        return ref.copy()
    pixels = ref.pixels.copy()
    pixels[~ref.fg_mask] = 1.0
    return ReferenceImage(pixels, ref.fg_mask.copy(), has_background=False)


@dataclass(frozen=True)
class MatchSet:
    """Matched keypoints; match ``i`` (0-based) carries label ``i + 1``.

    ``ref_points`` and ``frame_points`` are n x 2 integer arrays of (x, y).
    """

    ref_points: np.ndarray
    frame_points: np.ndarray

    def __post_init__(self):
        ref = np.asarray(self.ref_points, dtype=np.int64).reshape(-1, 2)
        frm = np.asarray(self.frame_points, dtype=np.int64).reshape(-1, 2)
        if ref.shape != frm.shape:
            raise ConditioningError(f"{len(ref)} reference points but {len(frm)} frame points")
        for side, pts in (("reference", ref), ("frame", frm)):
            if len({tuple(p) for p in pts.tolist()}) != len(pts):
                raise ConditioningError(f"duplicate {side} pixel in MatchSet")
        object.__setattr__(self, "ref_points", ref)
        object.__setattr__(self, "frame_points", frm)

    @property
    def n(self) -> int:
        return len(self.ref_points)

    @property
    def labels(self) -> np.ndarray:
        return np.arange(1, self.n + 1)

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other) -> bool:
        if not isinstance(other, MatchSet):
            return NotImplemented
        return np.array_equal(self.ref_points, other.ref_points) and np.array_equal(
            self.frame_points, other.frame_points
        )

    def as_list(self) -> list[tuple[tuple[int, int], tuple[int, int], int]]:
        return [
            (tuple(r), tuple(f), i + 1)
            for i, (r, f) in enumerate(zip(self.ref_points.tolist(), self.frame_points.tolist()))
        ]

    @classmethod
    def empty(cls) -> "MatchSet":
        return cls(np.zeros((0, 2), np.int64), np.zeros((0, 2), np.int64))

    @classmethod
    def from_list(cls, matches) -> "MatchSet":
        """Build from ``(ref_point, frame_point, label)`` triples; labels must be 1..n."""
        matches = sorted(matches, key=lambda m: m[2])
        if [m[2] for m in matches] != list(range(1, len(matches) + 1)):
            raise ConditioningError("labels must be exactly 1..n")
        if not matches:
            return cls.empty()
        return cls(np.array([m[0] for m in matches]), np.array([m[1] for m in matches]))


@dataclass(frozen=True)
class TrajectorySet:
    """n tracks over T frames: positions n x T x 2 (x, y) float, validity n x T.

    ``ref_points`` (n x 2) ties track ``i`` (label ``i + 1``) to its anchor in
    the reference image, so a TrajectorySet also determines a MatchSet for
    every frame.
    """

    positions: np.ndarray
    valid: np.ndarray
    ref_points: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 3 or pos.shape[-1] != 2:
            raise ConditioningError(f"positions must be n x T x 2, got {pos.shape}")
        valid = np.asarray(self.valid, dtype=bool).reshape(pos.shape[:2])
        ref = np.asarray(self.ref_points, dtype=np.int64).reshape(-1, 2)
        if len(ref) != len(pos):
            raise ConditioningError(f"{len(ref)} reference points for {len(pos)} tracks")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "ref_points", ref)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def T(self) -> int:
        return self.positions.shape[1]

    @property
    def labels(self) -> np.ndarray:
        return np.arange(1, self.n + 1)

    def matches_at(self, t: int = 0) -> MatchSet:
        """MatchSet between the reference and frame ``t`` (valid points only, relabelled)."""
        keep = self.valid[:, t]
        return MatchSet(self.ref_points[keep], round_half_up(self.positions[keep, t]))

    def arc_lengths(self) -> np.ndarray:
        steps = np.linalg.norm(np.diff(self.positions, axis=1), axis=-1)
        both = self.valid[:, 1:] & self.valid[:, :-1]
        return np.where(both, steps, 0.0).sum(axis=1)

    def subset(self, index) -> "TrajectorySet":
        index = np.asarray(index, dtype=np.int64)
        return TrajectorySet(
            self.positions[index].reshape(len(index), self.T, 2),
            self.valid[index].reshape(len(index), self.T),
            self.ref_points[index].reshape(len(index), 2),
        )

    @classmethod
    def empty(cls, T: int) -> "TrajectorySet":
        return cls(np.zeros((0, T, 2)), np.zeros((0, T), bool), np.zeros((0, 2), np.int64))


@dataclass
class PointMapSequence:
    """Stacked point-map pairs, shape 2 x T x H x W (side 0 reference, side 1 frame)."""

    maps: np.ndarray
    dropped: list[tuple[int, int]] = field(default_factory=list)  # (frame, label) lost to collisions

    @property
    def ref_map(self) -> np.ndarray:
        return self.maps[0, 0]

    @property
    def frame_maps(self) -> np.ndarray:
        return self.maps[1]

    @property
    def T(self) -> int:
        return self.maps.shape[1]

    def pair(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        return self.maps[0, t], self.maps[1, t]


def _check_in_bounds(points: np.ndarray, H: int, W: int, side: str) -> None:
    for i, (x, y) in enumerate(points.tolist()):
        if not (0 <= x < W and 0 <= y < H):
            raise ConditioningError(f"label {i + 1}: {side} point ({x}, {y}) outside {W}x{H} canvas")


def build_point_map_pair(matches: MatchSet, H: int, W: int) -> tuple[np.ndarray, np.ndarray]:
    """Reference and frame label grids: cell (x, y) of match ``i`` holds ``i``, the rest 0."""
    _check_in_bounds(matches.ref_points, H, W, "reference")
    _check_in_bounds(matches.frame_points, H, W, "frame")
    ref_map = np.zeros((H, W), dtype=np.int32)
    frame_map = np.zeros((H, W), dtype=np.int32)
    labels = matches.labels
    if matches.n:
        ref_map[matches.ref_points[:, 1], matches.ref_points[:, 0]] = labels
        frame_map[matches.frame_points[:, 1], matches.frame_points[:, 0]] = labels
    return ref_map, frame_map


def decode_point_map_pair(ref_map: np.ndarray, frame_map: np.ndarray) -> MatchSet:
    labels = np.unique(ref_map[ref_map > 0])
    ref_pts, frame_pts = [], []
    for label in labels:
        ry, rx = np.argwhere(ref_map == label)[0]
        hits = np.argwhere(frame_map == label)
        if len(hits) != 1:
            raise ConditioningError(f"label {label} appears {len(hits)} times in the frame map")
        fy, fx = hits[0]
        ref_pts.append((rx, ry))
        frame_pts.append((fx, fy))
    if len(labels) and not np.array_equal(labels, np.arange(1, len(labels) + 1)):
        raise ConditioningError("point-map labels are not contiguous")
    if not ref_pts:
        return MatchSet.empty()
    return MatchSet(np.array(ref_pts), np.array(frame_pts))


def build_point_map_sequence(matches: MatchSet, tracks: TrajectorySet, H: int, W: int) -> PointMapSequence:
    """Per-frame point-map pairs following ``tracks``.

    Track positions are rounded half-up.  Invalid or off-canvas points are
    left out of that frame.  When two labels land on one pixel the lower
    label keeps the cell and the other is recorded in ``dropped``.
    """
    if tracks.n != matches.n or not np.array_equal(tracks.ref_points, matches.ref_points):
        raise ConditioningError(
            f"tracks ({tracks.n}) and matches ({matches.n}) disagree on labels/reference points"
        )
    ref_map, _ = build_point_map_pair(matches, H, W)
    T = tracks.T
    out = np.zeros((2, T, H, W), dtype=np.int32)
    out[0] = ref_map
    dropped = []
    pix = round_half_up(tracks.positions)
    for t in range(T):
        frame_map = out[1, t]
        for i in range(tracks.n):
            if not tracks.valid[i, t]:
                continue
            x, y = pix[i, t]
            if not (0 <= x < W and 0 <= y < H):
                continue
            if frame_map[y, x]:
                dropped.append((t, i + 1))
                continue
            frame_map[y, x] = i + 1
    if dropped:
        logger.info("point-map collisions dropped %d (frame, label) entries", len(dropped))
    return PointMapSequence(out, dropped)


def interpolate_trajectories(start: MatchSet, end: MatchSet, T: int) -> TrajectorySet:
    """Straight-line tracks from ``start`` frame points to ``end`` frame points.

    The two sets are joined on reference-point identity; start labels without
    a partner in ``end`` are dropped (and logged).  Output order follows the
    start labels.
    """
    if T < 2:
        raise ConditioningError("interpolation needs T >= 2")
    end_lookup = {tuple(r): f for r, f in zip(end.ref_points.tolist(), end.frame_points.tolist())}
    keep, targets, dropped = [], [], []
    for i, r in enumerate(start.ref_points.tolist()):
        if tuple(r) in end_lookup:
            keep.append(i)
            targets.append(end_lookup[tuple(r)])
        else:
            dropped.append(i + 1)
    if dropped:
        logger.info("interpolate_trajectories: dropped unmatched start labels %s", dropped)
    if not keep:
        return TrajectorySet.empty(T)
    p0 = start.frame_points[keep].astype(np.float64)
    p1 = np.array(targets, dtype=np.float64)
    a = (np.arange(T, dtype=np.float64) / (T - 1))[None, :, None]
    positions = p0[:, None, :] + a * (p1 - p0)[:, None, :]
    positions[:, 0] = p0
    positions[:, -1] = p1
    return TrajectorySet(positions, np.ones(positions.shape[:2], bool), start.ref_points[keep])


def build_heatmaps(tracks: TrajectorySet, sigma: float, H: int, W: int) -> np.ndarray:
    """T x H x W map: max over valid keypoints of exp(-d^2 / (2 sigma^2)) at pixel centres."""
    if sigma <= 0:
        raise ConditioningError("sigma must be positive")
    out = np.zeros((tracks.T, H, W), dtype=np.float64)
    ys = np.arange(H, dtype=np.float64)[:, None]
    xs = np.arange(W, dtype=np.float64)[None, :]
    for t in range(tracks.T):
        for i in range(tracks.n):
            if not tracks.valid[i, t]:
                continue
            x, y = tracks.positions[i, t]
            g = np.exp(-((xs - x) ** 2 + (ys - y) ** 2) / (2.0 * sigma**2))
            np.maximum(out[t], g, out=out[t])
    return out


def default_sigma(H: int) -> float:
    return H / 32.0


def sample_keypoints(
    tracks: TrajectorySet,
    max_n: int,
    mode: str = "uniform",
    rng: np.random.Generator | None = None,
) -> TrajectorySet:
    """Keep up to ``max_n`` tracks, relabelled 1..m in draw order.

    ``motion_weighted`` draws without replacement, each draw proportional to
    the remaining tracks' arc lengths; if they are all zero it falls back to
    uniform.
    """
    if max_n < 1:
        raise ConditioningError("max_n must be >= 1")
    if mode not in ("uniform", "motion_weighted"):
        raise ConditioningError(f"unknown sampling mode {mode!r}")
    rng = np.random.default_rng() if rng is None else rng
    m = min(max_n, tracks.n)
    if m == 0:
        return tracks.subset([])
    if mode == "uniform":
        return tracks.subset(rng.choice(tracks.n, size=m, replace=False))
    remaining = list(range(tracks.n))
    weights = tracks.arc_lengths()
    chosen = []
    for _ in range(m):
        w = weights[remaining]
        total = w.sum()
        p = w / total if total > 0 else np.full(len(remaining), 1.0 / len(remaining))
        j = int(rng.choice(len(remaining), p=p))
        chosen.append(remaining.pop(j))
    return tracks.subset(chosen)


def encode_labels(maps, max_label: int) -> np.ndarray:
    """Scale integer labels into [0, 1] as ``label / max_label``; 0 stays 0."""
    arr = maps.maps if isinstance(maps, PointMapSequence) else np.asarray(maps)
    if arr.size and arr.max() > max_label:
        raise ConditioningError(f"label {int(arr.max())} exceeds max_label {max_label}")
    if arr.size and arr.min() < 0:
        raise ConditioningError("negative label")
    return (arr.astype(np.float32) / np.float32(max_label)).astype(np.float32)


# ---------------------------------------------------------------- serialization

def matches_to_json(matches: MatchSet, tracks: TrajectorySet | None = None) -> dict:
    doc = {
        "matches": [
            {"label": label, "ref": list(r), "frame": list(f)} for r, f, label in matches.as_list()
        ]
    }
    if tracks is not None:
        doc["tracks"] = {
            "positions": tracks.positions.tolist(),
            "valid": tracks.valid.tolist(),
            "ref_points": tracks.ref_points.tolist(),
        }
    return doc


def matches_from_json(doc: dict) -> tuple[MatchSet, TrajectorySet | None]:
    matches = MatchSet.from_list([(tuple(m["ref"]), tuple(m["frame"]), int(m["label"])) for m in doc["matches"]])
    tracks = None
    if "tracks" in doc:
        tr = doc["tracks"]
        pos = np.array(tr["positions"], dtype=np.float64)
        if pos.size == 0:
            T = len(tr["valid"][0]) if tr["valid"] else 0
            pos = pos.reshape(0, T, 2)
        tracks = TrajectorySet(pos, np.array(tr["valid"], bool).reshape(pos.shape[:2]), np.array(tr["ref_points"]))
    return matches, tracks


def save_matches(path, matches: MatchSet, tracks: TrajectorySet | None = None) -> None:
    Path(path).write_text(json.dumps(matches_to_json(matches, tracks)))


def load_matches(path) -> tuple[MatchSet, TrajectorySet | None]:
    return matches_from_json(json.loads(Path(path).read_text()))


def save_point_maps(directory, seq: PointMapSequence) -> None:
    """One 16-bit single-channel PNG per frame per side: ``ref_0000.png``, ``frame_0000.png``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if seq.maps.max(initial=0) > 65535:
        raise ConditioningError("labels do not fit in 16 bits")
    for t in range(seq.T):
        for side, name in ((0, "ref"), (1, "frame")):
            Image.fromarray(seq.maps[side, t].astype(np.uint16)).save(directory / f"{name}_{t:04d}.png")


def load_point_maps(directory) -> PointMapSequence:
    directory = Path(directory)
    T = len(list(directory.glob("frame_*.png")))
    if T == 0:
        raise ConditioningError(f"no point maps in {directory}")
    sides = []
    for name in ("ref", "frame"):
        frames = []
        for t in range(T):
            with Image.open(directory / f"{name}_{t:04d}.png") as im:
                frames.append(np.array(im).astype(np.int32))
        sides.append(np.stack(frames))
    return PointMapSequence(np.stack(sides))
