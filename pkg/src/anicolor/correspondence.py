"""Keypoint matching and tracking behind one interface.

Two backends:

* ``oracle`` reads the generator's anchor registry, i.e. perfect matches and
  perfect tracks.  Used to build training conditions.
* ``descriptor`` is a small classical matcher for inference, where no ground
  truth exists: Harris corners on line-art ink maps, normalised
  cross-correlation of binary patches, mutual-best plus ratio test.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .conditioning import (
    ConditioningError,
    MatchSet,
    TrajectorySet,
    binarize,
    interpolate_trajectories,
)
from .synthgen import AnchorRegistry, ReferenceImage, SyntheticClip, extract_lineart

logger = logging.getLogger(__name__)

BACKENDS = ("oracle", "descriptor")


class MatchingError(ValueError):
    pass


@dataclass(frozen=True)
class MatcherSpec:
    backend: str = "oracle"
    max_keypoints: int = 50
    patch_size: int = 9
    corner_threshold: float = 0.05
    ratio_test: float = 0.9
    max_corners: int = 200

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown matcher backend {self.backend!r}")
        if self.max_keypoints < 1:
            raise ValueError("max_keypoints must be >= 1")
        if self.patch_size % 2 == 0:
            raise ValueError("patch_size must be odd")


def ink_map(image: np.ndarray) -> np.ndarray:
    """1.0 on line pixels, 0.0 elsewhere, for a sketch (H x W) or colour frame (H x W x 3)."""
    image = np.asarray(image)
    if image.ndim == 3:
        image = extract_lineart(image, "oracle")
    elif image.dtype != np.uint8 and image.max() <= 1.0:
        image = np.round(image * 255)
    return (binarize(image) == 0).astype(np.float64)


def harris_corners(ink: np.ndarray, threshold: float = 0.05, max_corners: int = 200, k: float = 0.05) -> np.ndarray:
    """Corner locations (x, y), strongest first, after 5x5 non-maximum suppression."""
    smooth = ndimage.gaussian_filter(ink, 1.0)
    ix = ndimage.sobel(smooth, axis=1)
    iy = ndimage.sobel(smooth, axis=0)
    sxx = ndimage.gaussian_filter(ix * ix, 1.5)
    syy = ndimage.gaussian_filter(iy * iy, 1.5)
    sxy = ndimage.gaussian_filter(ix * iy, 1.5)
    response = sxx * syy - sxy**2 - k * (sxx + syy) ** 2
    top = response.max(initial=0.0)
    if top <= 0:
        return np.zeros((0, 2), dtype=np.int64)
    peaks = (response == ndimage.maximum_filter(response, size=5)) & (response > threshold * top)
    ys, xs = np.nonzero(peaks)
    order = np.lexsort((xs, ys, -response[ys, xs]))[:max_corners]
    return np.stack([xs[order], ys[order]], axis=1).astype(np.int64)


def _patches(ink: np.ndarray, points: np.ndarray, size: int) -> np.ndarray:
    r = size // 2
    padded = np.pad(ink, r)
    out = np.stack([padded[y : y + size, x : x + size].ravel() for x, y in points]) if len(points) else np.zeros((0, size * size))
    out = out - out.mean(axis=1, keepdims=True)
    norm = np.linalg.norm(out, axis=1, keepdims=True)
    return np.divide(out, norm, out=np.zeros_like(out), where=norm > 0)


def _ratio_ok(dist: np.ndarray, ratio: float, axis: int) -> tuple[np.ndarray, np.ndarray]:
    best = dist.argmin(axis=axis)
    if dist.shape[axis] < 2:
        return best, np.ones(dist.shape[1 - axis], dtype=bool)
    two = np.partition(dist, 1, axis=axis)
    d1 = np.take(two, 0, axis=axis)
    d2 = np.take(two, 1, axis=axis)
    return best, d1 < ratio * d2


def match_edge_maps(ink_a: np.ndarray, ink_b: np.ndarray, spec: MatcherSpec) -> list[tuple[tuple[int, int], tuple[int, int], float]]:
    """Mutual-best corner matches between two ink maps as ``(point_a, point_b, ncc)``.

    The ratio test is applied in both directions, so swapping the inputs
    returns the same pairs reversed.
    """
    pa = harris_corners(ink_a, spec.corner_threshold, spec.max_corners)
    pb = harris_corners(ink_b, spec.corner_threshold, spec.max_corners)
    if len(pa) == 0 or len(pb) == 0:
        return []
    da = _patches(ink_a, pa, spec.patch_size)
    db = _patches(ink_b, pb, spec.patch_size)
    ncc = da @ db.T
    dist = 1.0 - ncc
    best_b, ok_a = _ratio_ok(dist, spec.ratio_test, axis=1)
    best_a, ok_b = _ratio_ok(dist, spec.ratio_test, axis=0)
    out = []
    for i, j in enumerate(best_b):
        if best_a[j] == i and ok_a[i] and ok_b[j] and ncc[i, j] > 0:
            out.append((tuple(int(v) for v in pa[i]), tuple(int(v) for v in pb[j]), float(ncc[i, j])))
    return out


def _scan_order(pairs):
    return sorted(pairs, key=lambda p: (p[0][1], p[0][0], p[1][1], p[1][0]))


def _unique_pairs(pairs):
    seen_a, seen_b, out = set(), set(), []
    for a, b in pairs:
        if a in seen_a or b in seen_b:
            continue
        seen_a.add(a)
        seen_b.add(b)
        out.append((a, b))
    return out


def _to_matchset(pairs) -> MatchSet:
    if not pairs:
        return MatchSet.empty()
    return MatchSet(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))


def oracle_matches(registry: AnchorRegistry, frame_index: int | None = 0, max_keypoints: int | None = None) -> MatchSet:
    """Anchors visible in both the reference and the target frame.

    ``frame_index=None`` matches the reference against itself.
    """
    if frame_index is None:
        pos, valid = registry.reference, registry.reference_valid
    else:
        pos, valid = registry.frames[frame_index], registry.frame_valid[frame_index]
    both = registry.reference_valid & valid
    pairs = [
        (tuple(int(v) for v in registry.reference[k]), tuple(int(v) for v in pos[k]))
        for k in np.nonzero(both)[0]
    ]
    pairs = _unique_pairs(_scan_order(pairs))
    if max_keypoints is not None:
        pairs = pairs[:max_keypoints]
    return _to_matchset(pairs)


def match_reference(
    ref: ReferenceImage,
    target: np.ndarray,
    registry: AnchorRegistry | None = None,
    spec: MatcherSpec = MatcherSpec(),
    frame_index: int | None = 0,
) -> MatchSet:
    """Match reference keypoints to a target sketch or colour frame.

    Labels follow scan order of the reference point (row, then column).
    With the descriptor backend, both images are compared in the line-art
    domain; an empty result is logged, not raised.
    """
    if spec.backend == "oracle":
        if registry is None:
            raise MatchingError("oracle matching needs the anchor registry")
        return oracle_matches(registry, frame_index, spec.max_keypoints)
    ref_ink = ink_map(ref.pixels)
    target_ink = ink_map(target)
    found = match_edge_maps(ref_ink, target_ink, spec)
    if not found:
        logger.warning("descriptor matcher found no matches (no corners or no mutual matches)")
        return MatchSet.empty()
    found.sort(key=lambda m: -m[2])
    pairs = _unique_pairs([(a, b) for a, b, _ in found])[: spec.max_keypoints]
    return _to_matchset(_scan_order(pairs))


def _anchor_for(registry: AnchorRegistry, point, frame: int = 0, tol: float = 1.0) -> int | None:
    valid = np.nonzero(registry.frame_valid[frame])[0]
    if len(valid) == 0:
        return None
    d = np.linalg.norm(registry.frames[frame, valid] - np.asarray(point), axis=1)
    j = int(d.argmin())
    return int(valid[j]) if d[j] <= tol else None


def track_points(
    clip: SyntheticClip,
    start_matches: MatchSet,
    backend: str = "oracle",
    end_matches: MatchSet | None = None,
) -> TrajectorySet:
    """Tracks for the frame points of ``start_matches`` across the clip.

    ``oracle`` follows the anchor registry (each start point must lie within
    1 px of a visible anchor on frame 0).  ``interpolated`` draws straight
    lines to ``end_matches`` (oracle matches on the last frame if omitted).
    """
    if backend == "interpolated":
        if end_matches is None:
            end_matches = oracle_matches(clip.registry, clip.T - 1)
        return interpolate_trajectories(start_matches, end_matches, clip.T)
    if backend != "oracle":
        raise ValueError(f"unknown tracking backend {backend!r}")
    return registry_tracks(clip.registry, start_matches)


def registry_tracks(registry: AnchorRegistry, start_matches: MatchSet, T: int | None = None) -> TrajectorySet:
    """Ground-truth tracks: each start point is snapped to the anchor within 1 px on frame 0."""
    T = registry.frames.shape[0] if T is None else T
    anchors = []
    for label, point in zip(start_matches.labels, start_matches.frame_points.tolist()):
        k = _anchor_for(registry, point)
        if k is None:
            raise MatchingError(f"label {label}: frame point {tuple(point)} is not within 1 px of any anchor")
        anchors.append(k)
    if not anchors:
        return TrajectorySet.empty(T)
    idx = np.array(anchors)
    positions = registry.frames[:T, idx].transpose(1, 0, 2).astype(np.float64)
    valid = registry.frame_valid[:T, idx].T
    return TrajectorySet(positions, valid, start_matches.ref_points)


def track_by_matching(
    ref: ReferenceImage,
    sketches: np.ndarray,
    start_matches: MatchSet,
    spec: MatcherSpec,
) -> TrajectorySet:
    """Tracks from independent reference-to-frame matching on every sketch.

    A track is valid on frame t when frame t's matches contain its reference
    point; invalid frames hold the last known position.
    """
    T = len(sketches)
    n = start_matches.n
    positions = np.zeros((n, T, 2))
    valid = np.zeros((n, T), dtype=bool)
    positions[:, 0] = start_matches.frame_points
    valid[:, 0] = True
    index = {tuple(r): i for i, r in enumerate(start_matches.ref_points.tolist())}
    for t in range(1, T):
        positions[:, t] = positions[:, t - 1]
        m = match_reference(ref, sketches[t], spec=spec)
        for r, f in zip(m.ref_points.tolist(), m.frame_points.tolist()):
            i = index.get(tuple(r))
            if i is not None:
                positions[i, t] = f
                valid[i, t] = True
    return TrajectorySet(positions, valid, start_matches.ref_points)


__all__ = [
    "MatcherSpec",
    "MatchingError",
    "ConditioningError",
    "harris_corners",
    "ink_map",
    "match_edge_maps",
    "match_reference",
    "oracle_matches",
    "registry_tracks",
    "track_by_matching",
    "track_points",
]
