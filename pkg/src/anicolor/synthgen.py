"""Procedural anime-like clips with exact ground truth.

Every clip is rendered from a handful of flat-filled sprites with black
outlines.  Sprites move along closed-form affine paths, so the renderer also
knows where every anchor point is on every frame; that registry is the
correspondence oracle used everywhere else in the package.

Coordinates: x is the column, y is the row, origin top-left.  Integer
coordinates are pixel centres.
"""

from __future__ import annotations

import colorsys
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

SHAPE_KINDS = ("ellipse", "polygon", "blob")
BACKGROUND_KINDS = ("flat", "gradient", "checker", "none")
LINEART_MODES = ("oracle", "leaky", "edge")

LEAK_STRENGTH = 0.04
OUTLINE_THRESHOLD = 0.1  # max-channel value below which a frame pixel counts as ink
EDGE_THRESHOLD = 0.15
MIN_COLOR_DISTANCE = 0.2
INSIDE_FRACTION = 0.8


class GenerationError(ValueError):
    pass


class ClipFormatError(ValueError):
    pass


def round_half_up(x):
    """Round to the nearest integer with ties going up (``floor(x + 0.5)``)."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


def to_float(img_u8: np.ndarray) -> np.ndarray:
    return img_u8.astype(np.float32) / np.float32(255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class Motion:
    """Affine path, linear in the frame index between two key times.

    Outside ``[t_start, t_end]`` the path is extrapolated with the same
    formula, so ``at`` is a single closed form for every frame.
    """

    t_start: float
    t_end: float
    center_start: tuple[float, float]
    center_end: tuple[float, float]
    angle_start: float = 0.0
    angle_end: float = 0.0
    scale_start: float = 1.0
    scale_end: float = 1.0

    def at(self, t: float) -> tuple[float, float, float, float]:
        span = self.t_end - self.t_start
        a = 0.0 if span == 0 else (t - self.t_start) / span
        cx = self.center_start[0] + a * (self.center_end[0] - self.center_start[0])
        cy = self.center_start[1] + a * (self.center_end[1] - self.center_start[1])
        angle = self.angle_start + a * (self.angle_end - self.angle_start)
        scale = self.scale_start + a * (self.scale_end - self.scale_start)
        return cx, cy, angle, scale


@dataclass(frozen=True)
class SpriteSpec:
    shape_kind: str
    radius: float
    fill_color: tuple[float, float, float]
    motion: Motion
    outline_width: int = 1
    z_order: int = 0
    aspect: float = 1.0  # ellipse minor/major ratio
    sides: int = 5  # polygon only
    harmonics: tuple[tuple[int, float, float], ...] = ()  # blob: (k, amplitude, phase)
    anchor_points: tuple[tuple[str, tuple[float, float]], ...] = ()

    def __post_init__(self):
        if self.shape_kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.shape_kind!r}")
        if self.outline_width < 1:
            raise ValueError("outline_width must be >= 1")

    @property
    def kind_name(self) -> str:
        return f"polygon-{self.sides}" if self.shape_kind == "polygon" else self.shape_kind

    def boundary_radius(self, theta: np.ndarray) -> np.ndarray:
        """Distance from the sprite centre to its boundary along ``theta`` (local frame)."""
        theta = np.asarray(theta, dtype=np.float64)
        if self.shape_kind == "ellipse":
            a, b = self.radius, self.radius * self.aspect
            return a * b / np.sqrt((b * np.cos(theta)) ** 2 + (a * np.sin(theta)) ** 2)
        if self.shape_kind == "polygon":
            k = self.sides
            wedge = 2.0 * math.pi / k
            phi = np.mod(theta, wedge) - wedge / 2.0
            return self.radius * math.cos(math.pi / k) / np.cos(phi)
        r = np.ones_like(theta)
        for k, amp, phase in self.harmonics:
            r = r + amp * np.cos(k * theta + phase)
        return self.radius * r

    def max_extent(self) -> float:
        theta = np.linspace(0.0, 2.0 * math.pi, 720, endpoint=False)
        return float(self.boundary_radius(theta).max())

    def anchor_position(self, name_or_index, t: float) -> tuple[float, float]:
        if isinstance(name_or_index, int):
            local = self.anchor_points[name_or_index][1]
        else:
            local = dict(self.anchor_points)[name_or_index]
        return _local_to_canvas(local, self.motion.at(t))

    def render_mask(self, t: float, H: int, W: int) -> np.ndarray:
        cx, cy, angle, scale = self.motion.at(t)
        ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
        dx, dy = xs - cx, ys - cy
        c, s = math.cos(-angle), math.sin(-angle)
        lx = (c * dx - s * dy) / scale
        ly = (s * dx + c * dy) / scale
        rho = np.hypot(lx, ly)
        return rho <= self.boundary_radius(np.arctan2(ly, lx))


def _local_to_canvas(local, pose) -> tuple[float, float]:
    cx, cy, angle, scale = pose
    lx, ly = local
    c, s = math.cos(angle), math.sin(angle)
    return cx + scale * (c * lx - s * ly), cy + scale * (s * lx + c * ly)


@dataclass(frozen=True)
class GenConfig:
    T: int = 14
    H: int = 64
    W: int = 64
    n_sprites: int = 2
    reference_offset: int = 32
    background_kind: str = "flat"
    motion: str = "linear"  # "linear" or "static"
    radius_range: tuple[float, float] = (0.13, 0.2)  # fraction of min(H, W)
    n_anchors: tuple[int, int] = (4, 12)

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("T must be >= 2")
        if self.H < 32 or self.W < 32:
            raise ValueError("H and W must be >= 32")
        if not 1 <= self.n_sprites <= 8:
            raise ValueError("n_sprites must be in [1, 8]")
        if self.reference_offset < 0:
            raise ValueError("reference_offset must be >= 0")
        if self.background_kind not in BACKGROUND_KINDS:
            raise ValueError(f"unknown background kind {self.background_kind!r}")
        if self.motion not in ("linear", "static"):
            raise ValueError(f"unknown motion kind {self.motion!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        for key in ("radius_range", "n_anchors"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class ReferenceImage:
    pixels: np.ndarray  # H x W x 3 float32 in [0, 1]
    fg_mask: np.ndarray  # H x W bool
    has_background: bool = True

    def copy(self) -> "ReferenceImage":
        return ReferenceImage(self.pixels.copy(), self.fg_mask.copy(), self.has_background)


@dataclass
class AnchorRegistry:
    """Ground-truth anchor positions, integer pixels after half-up rounding.

    ``names[k]`` is ``(sprite_index, anchor_name)``.  ``frames`` is T x K x 2
    (x, y); ``reference`` is K x 2.  Validity means inside the canvas and not
    hidden behind a sprite with higher z-order.
    """

    names: list[tuple[int, str]]
    frames: np.ndarray
    frame_valid: np.ndarray
    reference: np.ndarray
    reference_valid: np.ndarray

    @property
    def n_anchors(self) -> int:
        return len(self.names)

    def sprite_of(self, k: int) -> int:
        return self.names[k][0]


@dataclass
class SyntheticClip:
    frames: np.ndarray  # T x H x W x 3 float32
    outlines: np.ndarray  # T x H x W uint8, oracle line art
    fg_masks: np.ndarray  # T x H x W bool
    labels: np.ndarray  # T x H x W uint8, 0 background, k + 1 for sprite k (outline included)
    sprites: tuple[SpriteSpec, ...]
    registry: AnchorRegistry
    reference: ReferenceImage
    seed: int
    config: GenConfig
    reference_labels: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def H(self) -> int:
        return self.frames.shape[1]

    @property
    def W(self) -> int:
        return self.frames.shape[2]

    def sprite_mask(self, k: int) -> np.ndarray:
        """Visible interior (outline excluded) of sprite ``k`` on every frame."""
        return (self.labels == k + 1) & (self.outlines > 0)


def _background(kind: str, H: int, W: int, rng: np.random.Generator) -> np.ndarray:
    def pale():
        h = rng.random()
        s = rng.uniform(0.05, 0.25)
        v = rng.uniform(0.85, 1.0)
        return np.array(colorsys.hsv_to_rgb(h, s, v))

    if kind == "none":
        img = np.ones((H, W, 3))
    elif kind == "flat":
        img = np.broadcast_to(pale(), (H, W, 3))
    elif kind == "gradient":
        c0, c1 = pale(), pale()
        a = np.linspace(0.0, 1.0, W)[None, :, None]
        img = np.broadcast_to(c0 * (1 - a) + c1 * a, (H, W, 3))
    else:
        c0, c1 = pale(), pale()
        cell = max(4, min(H, W) // 8)
        ys, xs = np.mgrid[0:H, 0:W]
        checker = ((ys // cell + xs // cell) % 2).astype(bool)
        img = np.where(checker[..., None], c1, c0)
    return to_uint8(img)


def _sample_fill_colors(n: int, rng: np.random.Generator) -> list[tuple[float, float, float]]:
    colors: list[np.ndarray] = []
    for _ in range(10_000):
        if len(colors) == n:
            break
        rgb = colorsys.hsv_to_rgb(rng.random(), rng.uniform(0.3, 0.65), rng.uniform(0.3, 1.0))
        c = to_uint8(np.array(rgb)).astype(np.float64) / 255.0
        if all(np.max(np.abs(c - other)) >= MIN_COLOR_DISTANCE for other in colors):
            colors.append(c)
    else:
        raise GenerationError(f"could not draw {n} mutually distinct fill colors")
    return [tuple(float(v) for v in c) for c in colors]


def _make_anchors(shape: SpriteSpec, n: int, rng: np.random.Generator):
    anchors = [("center", (0.0, 0.0))]
    base = rng.uniform(0.0, 2.0 * math.pi)
    for i in range(n - 1):
        theta = base + 2.0 * math.pi * i / (n - 1)
        frac = 0.55 if i % 2 == 0 else 0.3
        r = frac * float(shape.boundary_radius(np.array([theta]))[0])
        anchors.append((f"a{i}", (r * math.cos(theta), r * math.sin(theta))))
    return tuple(anchors)


def _center_interval(extent: float, size: int, sprite_index: int) -> tuple[float, float]:
    """Centre positions keeping at least 80% of the sprite's bounding box on canvas."""
    lo, hi = extent, size - 1 - extent
    if lo <= hi:
        return lo, hi
    # bounding box wider than canvas: best case is centred
    inside = min(1.0, size / (2.0 * extent))
    if inside < INSIDE_FRACTION:
        raise GenerationError(
            f"sprite {sprite_index}: canvas {size}px too small for extent {2 * extent:.1f}px "
            f"(only {inside:.0%} inside)"
        )
    mid = (size - 1) / 2.0
    return mid, mid


def _check_inside(spec: SpriteSpec, t: float, H: int, W: int, index: int) -> None:
    cx, cy, _, scale = spec.motion.at(t)
    e = spec.max_extent() * scale
    x0, x1 = max(cx - e, 0.0), min(cx + e, W - 1.0)
    y0, y1 = max(cy - e, 0.0), min(cy + e, H - 1.0)
    inside = max(0.0, x1 - x0) * max(0.0, y1 - y0) / (2 * e) ** 2
    if inside < INSIDE_FRACTION - 1e-9:
        raise GenerationError(f"sprite {index}: only {inside:.0%} of its bounding box inside at t={t}")


def sample_sprites(config: GenConfig, rng: np.random.Generator) -> list[SpriteSpec]:
    H, W = config.H, config.W
    t0, t1 = -float(config.reference_offset), float(config.T - 1)
    colors = _sample_fill_colors(config.n_sprites, rng)
    z_orders = rng.permutation(config.n_sprites)
    sprites = []
    for i in range(config.n_sprites):
        kind = SHAPE_KINDS[rng.integers(len(SHAPE_KINDS))]
        radius = rng.uniform(*config.radius_range) * min(H, W)
        kwargs = {}
        if kind == "ellipse":
            kwargs["aspect"] = float(rng.uniform(0.6, 1.0))
        elif kind == "polygon":
            kwargs["sides"] = int(rng.integers(3, 7))
        else:
            kwargs["harmonics"] = tuple(
                (int(k), float(rng.uniform(0.05, 0.18)), float(rng.uniform(0, 2 * math.pi))) for k in (2, 3)
            )
        if config.motion == "static":
            scales = (1.0, 1.0)
            angles = (0.0, 0.0)
        else:
            scales = tuple(float(s) for s in rng.uniform(0.85, 1.15, size=2))
            a0 = float(rng.uniform(-math.pi, math.pi))
            angles = (a0, a0 + float(rng.uniform(-math.pi / 3, math.pi / 3)))
        shape = SpriteSpec(kind, float(radius), colors[i], Motion(t0, t1, (0, 0), (0, 0)), **kwargs)
        extent = shape.max_extent() * max(scales)
        xr = _center_interval(extent, W, i)
        yr = _center_interval(extent, H, i)
        p0 = (float(rng.uniform(*xr)), float(rng.uniform(*yr)))
        p1 = p0 if config.motion == "static" else (float(rng.uniform(*xr)), float(rng.uniform(*yr)))
        motion = Motion(t0, t1, p0, p1, angles[0], angles[1], scales[0], scales[1])
        n_anchors = int(rng.integers(config.n_anchors[0], config.n_anchors[1] + 1))
        spec = SpriteSpec(
            kind,
            float(radius),
            colors[i],
            motion,
            outline_width=1,
            z_order=int(z_orders[i]),
            anchor_points=_make_anchors(shape, n_anchors, rng),
            **kwargs,
        )
        sprites.append(spec)
    return sprites


def _render(sprites: Sequence[SpriteSpec], t: float, background: np.ndarray):
    H, W, _ = background.shape
    img = background.copy()
    labels = np.zeros((H, W), dtype=np.uint8)
    line = np.zeros((H, W), dtype=bool)
    for k in sorted(range(len(sprites)), key=lambda i: (sprites[i].z_order, i)):
        spec = sprites[k]
        mask = spec.render_mask(t, H, W)
        interior = ndimage.binary_erosion(mask, iterations=spec.outline_width, border_value=1)
        outline = mask & ~interior
        labels[mask] = k + 1
        line[mask] = False
        line[outline] = True
        img[mask] = to_uint8(np.array(spec.fill_color))
    img[line] = 0
    outline_img = np.where(line, 0, 255).astype(np.uint8)
    return img, outline_img, labels


def _anchor_table(sprites: Sequence[SpriteSpec], t: float, labels: np.ndarray):
    H, W = labels.shape
    pos, valid = [], []
    for k, spec in enumerate(sprites):
        for name, _ in spec.anchor_points:
            x, y = spec.anchor_position(name, t)
            xi, yi = int(round_half_up(x)), int(round_half_up(y))
            ok = 0 <= xi < W and 0 <= yi < H and labels[yi, xi] == k + 1
            pos.append((xi, yi))
            valid.append(ok)
    return np.array(pos, dtype=np.int64).reshape(-1, 2), np.array(valid, dtype=bool)


def render_clip(
    sprites: Sequence[SpriteSpec],
    config: GenConfig,
    seed: int,
    background: np.ndarray | None = None,
) -> SyntheticClip:
    """Render explicit sprite specs into a clip (frames 0..T-1, reference at -offset)."""
    H, W = config.H, config.W
    if background is None:
        background = _background(config.background_kind, H, W, np.random.default_rng([seed, 1]))
    for i, spec in enumerate(sprites):
        for t in (-config.reference_offset, 0, config.T - 1):
            _check_inside(spec, float(t), H, W, i)
    frames, outlines, labels, pos, valid = [], [], [], [], []
    for t in range(config.T):
        img, out, lab = _render(sprites, float(t), background)
        p, v = _anchor_table(sprites, float(t), lab)
        frames.append(img)
        outlines.append(out)
        labels.append(lab)
        pos.append(p)
        valid.append(v)
    ref_img, _, ref_lab = _render(sprites, -float(config.reference_offset), background)
    ref_pos, ref_valid = _anchor_table(sprites, -float(config.reference_offset), ref_lab)
    names = [(k, name) for k, spec in enumerate(sprites) for name, _ in spec.anchor_points]
    registry = AnchorRegistry(names, np.stack(pos), np.stack(valid), ref_pos, ref_valid)
    labels_arr = np.stack(labels)
    reference = ReferenceImage(to_float(ref_img), ref_lab > 0, config.background_kind != "none")
    return SyntheticClip(
        frames=to_float(np.stack(frames)),
        outlines=np.stack(outlines),
        fg_masks=labels_arr > 0,
        labels=labels_arr,
        sprites=tuple(sprites),
        registry=registry,
        reference=reference,
        seed=int(seed),
        config=config,
        reference_labels=ref_lab,
    )


def generate_clip(config: GenConfig, seed: int) -> SyntheticClip:
    """Draw random sprites for ``seed`` and render them. Pure in ``(config, seed)``."""
    rng = np.random.default_rng([seed, 0])
    sprites = sample_sprites(config, rng)
    return render_clip(sprites, config, seed)


def generate_swap_clip(config: GenConfig, seed: int) -> SyntheticClip:
    """Two identically shaped sprites that trade sides between the reference and the clip.

    Copying colour from the same image position in the reference gives the
    wrong answer; only correspondence tells the two sprites apart.
    """
    if config.n_sprites != 2:
        config = GenConfig(**{**asdict(config), "n_sprites": 2})
    rng = np.random.default_rng([seed, 2])
    H, W = config.H, config.W
    t0, t1 = -float(config.reference_offset), float(config.T - 1)
    colors = _sample_fill_colors(2, rng)
    kind = SHAPE_KINDS[rng.integers(len(SHAPE_KINDS))]
    radius = float(rng.uniform(*config.radius_range) * min(H, W))
    kwargs = {}
    if kind == "ellipse":
        kwargs["aspect"] = float(rng.uniform(0.6, 1.0))
    elif kind == "polygon":
        kwargs["sides"] = int(rng.integers(3, 7))
    else:
        kwargs["harmonics"] = tuple(
            (int(k), float(rng.uniform(0.05, 0.18)), float(rng.uniform(0, 2 * math.pi))) for k in (2, 3)
        )
    proto = SpriteSpec(kind, radius, colors[0], Motion(t0, t1, (0, 0), (0, 0)), **kwargs)
    extent = proto.max_extent()
    n_anchors = int(rng.integers(config.n_anchors[0], config.n_anchors[1] + 1))
    anchors = _make_anchors(proto, n_anchors, rng)
    left = extent + 0.5
    right = W - 1 - extent - 0.5
    if right - left < 2 * extent:
        raise GenerationError("sprite 0: canvas too narrow for a side-by-side swap")
    ys = [float(rng.uniform(extent, H - 1 - extent)) for _ in range(2)]
    angle = float(rng.uniform(-math.pi, math.pi))
    # reference time: sprite 0 on the left; by the last frame it sits on the right
    sprites = []
    for k, (xa, xb) in enumerate(((left, right), (right, left))):
        motion = Motion(t0, t1, (xa, ys[k]), (xb, ys[1 - k]), angle, angle)
        sprites.append(SpriteSpec(kind, radius, colors[k], motion, z_order=k, anchor_points=anchors, **kwargs))
    return render_clip(sprites, config, seed)


def _luma(frame: np.ndarray) -> np.ndarray:
    return 0.299 * frame[..., 0] + 0.587 * frame[..., 1] + 0.114 * frame[..., 2]


def extract_lineart(frame: np.ndarray, mode: str = "oracle", leak_strength: float = LEAK_STRENGTH) -> np.ndarray:
    """Grayscale line art (uint8, ink dark, paper 255) from a colour frame.

    ``oracle`` recovers the rendered outline exactly (ink pixels of the
    frame).  ``leaky`` composites that outline with a faint copy of the frame
    luminance so every non-line pixel stays above 200 but still encodes
    colour.  ``edge`` thresholds a Sobel gradient magnitude.
    """
    if mode not in LINEART_MODES:
        raise ValueError(f"unknown line-art mode {mode!r}")
    frame = np.asarray(frame, dtype=np.float64)
    ink = frame.max(axis=-1) < OUTLINE_THRESHOLD
    outline = np.where(ink, 0, 255).astype(np.int64)
    if mode == "oracle":
        return outline.astype(np.uint8)
    if mode == "leaky":
        leak = 255 - np.floor(leak_strength * (1.0 - _luma(frame)) * 255.0 + 1e-9).astype(np.int64)
        return np.minimum(outline, leak).astype(np.uint8)
    luma = _luma(frame)
    mag = np.hypot(ndimage.sobel(luma, axis=0, mode="nearest"), ndimage.sobel(luma, axis=1, mode="nearest"))
    return np.where(mag > EDGE_THRESHOLD, 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------- io

def _sprite_to_json(spec: SpriteSpec) -> dict:
    d = asdict(spec)
    d["anchor_points"] = [[name, list(p)] for name, p in spec.anchor_points]
    d["harmonics"] = [list(h) for h in spec.harmonics]
    return d


def _sprite_from_json(d: dict) -> SpriteSpec:
    m = d["motion"]
    motion = Motion(
        m["t_start"], m["t_end"], tuple(m["center_start"]), tuple(m["center_end"]),
        m["angle_start"], m["angle_end"], m["scale_start"], m["scale_end"],
    )
    return SpriteSpec(
        shape_kind=d["shape_kind"],
        radius=d["radius"],
        fill_color=tuple(d["fill_color"]),
        motion=motion,
        outline_width=d["outline_width"],
        z_order=d["z_order"],
        aspect=d["aspect"],
        sides=d["sides"],
        harmonics=tuple(tuple(h) for h in d["harmonics"]),
        anchor_points=tuple((name, tuple(p)) for name, p in d["anchor_points"]),
    )


def _save_png(path: Path, arr: np.ndarray) -> None:
    Image.fromarray(arr).save(path, format="PNG")


def _load_png(path: Path) -> np.ndarray:
    if not path.exists():
        raise ClipFormatError(f"missing file {path.name}")
    with Image.open(path) as im:
        return np.array(im)


def write_clip(clip: SyntheticClip, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for t in range(clip.T):
        _save_png(path / f"frame_{t:04d}.png", to_uint8(clip.frames[t]))
        _save_png(path / f"outline_{t:04d}.png", clip.outlines[t])
        _save_png(path / f"mask_{t:04d}.png", np.where(clip.fg_masks[t], 255, 0).astype(np.uint8))
        _save_png(path / f"label_{t:04d}.png", clip.labels[t])
    _save_png(path / "reference.png", to_uint8(clip.reference.pixels))
    _save_png(path / "reference_mask.png", np.where(clip.reference.fg_mask, 255, 0).astype(np.uint8))
    if clip.reference_labels is not None:
        _save_png(path / "reference_label.png", clip.reference_labels)
    reg = clip.registry
    meta = {
        "T": clip.T,
        "H": clip.H,
        "W": clip.W,
        "seed": clip.seed,
        "config": asdict(clip.config),
        "has_background": bool(clip.reference.has_background),
        "sprites": [_sprite_to_json(s) for s in clip.sprites],
        "registry": {
            "names": [[k, name] for k, name in reg.names],
            "frames": reg.frames.tolist(),
            "frame_valid": reg.frame_valid.tolist(),
            "reference": reg.reference.tolist(),
            "reference_valid": reg.reference_valid.tolist(),
        },
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=1))
    return path


def read_clip(path) -> SyntheticClip:
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise ClipFormatError(f"missing metadata in {path}")
    try:
        meta = json.loads(meta_path.read_text())
        T, H, W = int(meta["T"]), int(meta["H"]), int(meta["W"])
        config = GenConfig.from_dict(meta["config"])
        sprites = tuple(_sprite_from_json(s) for s in meta["sprites"])
        reg = meta["registry"]
        K = len(reg["names"])
        registry = AnchorRegistry(
            names=[(int(k), str(n)) for k, n in reg["names"]],
            frames=np.array(reg["frames"], dtype=np.int64).reshape(T, K, 2),
            frame_valid=np.array(reg["frame_valid"], dtype=bool).reshape(T, K),
            reference=np.array(reg["reference"], dtype=np.int64).reshape(K, 2),
            reference_valid=np.array(reg["reference_valid"], dtype=bool).reshape(K),
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ClipFormatError(f"malformed metadata in {meta_path}: {exc}") from exc
    n_files = len(list(path.glob("frame_*.png")))
    if n_files != T:
        raise ClipFormatError(f"metadata says T={T} but found {n_files} frame files")
    frames = np.stack([_load_png(path / f"frame_{t:04d}.png") for t in range(T)])
    outlines = np.stack([_load_png(path / f"outline_{t:04d}.png") for t in range(T)])
    masks = np.stack([_load_png(path / f"mask_{t:04d}.png") for t in range(T)]) > 0
    if (path / f"label_{0:04d}.png").exists():
        labels = np.stack([_load_png(path / f"label_{t:04d}.png") for t in range(T)])
    else:
        labels = masks.astype(np.uint8)
    if frames.shape != (T, H, W, 3):
        raise ClipFormatError(f"frame shape {frames.shape[1:]} does not match metadata {(H, W, 3)}")
    ref_labels = None
    if (path / "reference_label.png").exists():
        ref_labels = _load_png(path / "reference_label.png")
    reference = ReferenceImage(
        to_float(_load_png(path / "reference.png")),
        _load_png(path / "reference_mask.png") > 0,
        bool(meta.get("has_background", True)),
    )
    return SyntheticClip(
        frames=to_float(frames),
        outlines=outlines,
        fg_masks=masks,
        labels=labels,
        sprites=sprites,
        registry=registry,
        reference=reference,
        seed=int(meta["seed"]),
        config=config,
        reference_labels=ref_labels,
    )


def clip_io(clip: SyntheticClip | None, path, direction: str):
    if direction == "write":
        if clip is None:
            raise ValueError("write needs a clip")
        write_clip(clip, path)
        return None
    if direction == "read":
        return read_clip(path)
    raise ValueError(f"direction must be 'write' or 'read', got {direction!r}")


def clips_equal(a: SyntheticClip, b: SyntheticClip) -> bool:
    return (
        np.array_equal(a.frames, b.frames)
        and np.array_equal(a.outlines, b.outlines)
        and np.array_equal(a.fg_masks, b.fg_masks)
        and np.array_equal(a.labels, b.labels)
        and np.array_equal(a.reference.pixels, b.reference.pixels)
        and np.array_equal(a.reference.fg_mask, b.reference.fg_mask)
        and a.reference.has_background == b.reference.has_background
        and a.sprites == b.sprites
        and a.registry.names == b.registry.names
        and np.array_equal(a.registry.frames, b.registry.frames)
        and np.array_equal(a.registry.frame_valid, b.registry.frame_valid)
        and np.array_equal(a.registry.reference, b.registry.reference)
        and np.array_equal(a.registry.reference_valid, b.registry.reference_valid)
        and a.seed == b.seed
        and a.config == b.config
    )
