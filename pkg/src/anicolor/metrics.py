"""Evaluation: masked PSNR/SSIM, per-sprite colour error, temporal consistency
and a linear probe that measures how much colour a sketch leaks."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .synthgen import SyntheticClip, extract_lineart

PSNR_CAP = 99.0
SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class MetricError(ValueError):
    pass


def _as_video(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4 or a.shape[-1] != 3:
        raise MetricError(f"expected T x H x W x 3, got {a.shape}")
    return a


def _video_mask(mask, shape) -> np.ndarray | None:
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    T, H, W, _ = shape
    if mask.shape == (H, W):
        mask = np.broadcast_to(mask, (T, H, W))
    if mask.shape != (T, H, W):
        raise MetricError(f"mask shape {mask.shape} does not fit video {shape}")
    if not mask.any():
        raise MetricError("empty mask")
    return mask


def psnr(a, b, mask=None) -> float:
    """PSNR in dB for [0, 1] videos, over masked pixels; identical inputs give ``PSNR_CAP``."""
    a, b = _as_video(a), _as_video(b)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    m = _video_mask(mask, a.shape)
    err = (a - b) ** 2
    mse = err.mean() if m is None else err[m].mean()
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def ssim(a, b, mask=None, window: int = SSIM_WINDOW, k1: float = SSIM_K1, k2: float = SSIM_K2) -> float:
    """Mean SSIM over all ``window`` x ``window`` sliding windows (per frame and channel).

    With a mask, only windows containing at least one masked pixel count.
    """
    a, b = _as_video(a), _as_video(b)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    T, H, W, _ = a.shape
    if H < window or W < window:
        raise MetricError(f"frame {H}x{W} smaller than the {window}x{window} window")
    m = _video_mask(mask, a.shape)
    c1, c2 = k1**2, k2**2
    wa = sliding_window_view(a, (window, window), axis=(1, 2))
    wb = sliding_window_view(b, (window, window), axis=(1, 2))
    mu_a = wa.mean(axis=(-1, -2))
    mu_b = wb.mean(axis=(-1, -2))
    var_a = wa.var(axis=(-1, -2))
    var_b = wb.var(axis=(-1, -2))
    cov = (wa * wb).mean(axis=(-1, -2)) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    if m is None:
        return float(s.mean())
    hit = sliding_window_view(m, (window, window), axis=(1, 2)).any(axis=(-1, -2))
    return float(s[hit].mean())


def region_color_error(video, clip: SyntheticClip) -> np.ndarray:
    """Per sprite: mean over frames of ||mean colour in the sprite interior - fill colour||."""
    video = _as_video(video)
    if video.shape != clip.frames.shape:
        raise MetricError(f"video shape {video.shape} does not match clip {clip.frames.shape}")
    out = []
    for k, spec in enumerate(clip.sprites):
        masks = clip.sprite_mask(k)
        fill = np.asarray(spec.fill_color)
        errs = [np.linalg.norm(video[t][masks[t]].mean(axis=0) - fill) for t in range(clip.T) if masks[t].any()]
        if not errs:
            raise MetricError(f"sprite {k} is never visible")
        out.append(float(np.mean(errs)))
    return np.array(out)


def temporal_consistency(video, gt) -> float:
    """Mean over t of ||(v[t+1] - v[t]) - (g[t+1] - g[t])||_1 / (H * W)."""
    v, g = _as_video(video), _as_video(gt)
    if v.shape != g.shape:
        raise MetricError(f"shape mismatch {v.shape} vs {g.shape}")
    if v.shape[0] < 2:
        raise MetricError("temporal consistency needs T >= 2")
    diff = np.diff(v, axis=0) - np.diff(g, axis=0)
    per_step = np.abs(diff).sum(axis=(1, 2, 3)) / (v.shape[1] * v.shape[2])
    return float(per_step.mean())


def mean_interframe_l1(video) -> float:
    v = _as_video(video)
    return float(np.abs(np.diff(v, axis=0)).mean())


# ------------------------------------------------------------------ leakage probe

@dataclass
class ProbeResult:
    r2: float | None
    n_samples: int
    reason: str = ""


def leakage_probe(features, colors, seed: int = 0, test_fraction: float = 0.2) -> ProbeResult:
    """Out-of-sample R^2 of an ordinary least-squares map from sketch patches to colours.

    R^2 pools all colour channels (one minus total residual over total
    variance around the held-out mean).  Constant features are fine; the fit
    then reduces to the intercept.
    """
    X = np.asarray(features, dtype=np.float64)
    Y = np.asarray(colors, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = len(X)
    if n < 50:
        raise MetricError(f"leakage probe needs >= 50 samples, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(test_fraction * n)))
    test, train = perm[:n_test], perm[n_test:]
    X1 = np.hstack([X, np.ones((n, 1))]) / np.array([255.0] * X.shape[1] + [1.0])
    coef, *_ = np.linalg.lstsq(X1[train], Y[train], rcond=None)
    pred = X1[test] @ coef
    sst = ((Y[test] - Y[test].mean(axis=0)) ** 2).sum()
    if sst == 0:
        return ProbeResult(None, n, "held-out colours have zero variance")
    if not np.all(np.isfinite(pred)):
        return ProbeResult(None, n, "degenerate design matrix")
    return ProbeResult(float(1.0 - ((Y[test] - pred) ** 2).sum() / sst), n)


def probe_samples(clips, mode: str = "leaky", patch: int = 5, binarized: bool = False):
    """(sketch patch, region colour) pairs: one patch per visible sprite per frame.

    The patch is centred on the interior pixel farthest from the sprite
    outline and is only used when it avoids the outline entirely.
    """
    from .conditioning import binarize

    r = patch // 2
    feats, cols = [], []
    for clip in clips:
        for t in range(clip.T):
            sketch = extract_lineart(clip.frames[t], mode)
            if binarized:
                sketch = binarize(sketch)
            for k, spec in enumerate(clip.sprites):
                interior = clip.sprite_mask(k)[t]
                if not interior.any():
                    continue
                dist = ndimage.distance_transform_cdt(np.pad(interior, 1), metric="chessboard")[1:-1, 1:-1]
                y, x = np.unravel_index(np.argmax(dist), dist.shape)
                if dist[y, x] <= r:
                    continue
                feats.append(sketch[y - r : y + r + 1, x - r : x + r + 1].ravel().astype(np.float64))
                cols.append(np.asarray(spec.fill_color))
    return np.array(feats), np.array(cols)


# ------------------------------------------------------------------ reports

@dataclass
class MetricReport:
    per_clip: list[dict] = field(default_factory=list)
    masked: bool = True
    resolution: tuple[int, int] = (64, 64)
    leakage_probe_r2: float | None = None

    @property
    def aggregate(self) -> dict:
        keys = ["psnr", "ssim", "region_color_error", "temporal_consistency"]
        agg = {}
        for key in keys:
            vals = [row[key] for row in self.per_clip if row.get(key) is not None]
            agg[key] = float(np.mean(vals)) if vals else None
        if self.leakage_probe_r2 is not None:
            agg["leakage_probe_r2"] = self.leakage_probe_r2
        return agg

    def to_dict(self) -> dict:
        return {
            "masked": self.masked,
            "resolution": list(self.resolution),
            "per_clip": self.per_clip,
            "aggregate": self.aggregate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["clip", "psnr", "ssim", "region_color_error", "temporal_consistency"]
        writer = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore")
        writer.writeheader()
        for row in self.per_clip:
            writer.writerow(row)
        writer.writerow({"clip": "mean", **self.aggregate})
        return buf.getvalue()


def evaluate_clip(video, clip: SyntheticClip, masked: bool = True, name: str = "") -> dict:
    mask = clip.fg_masks if masked else None
    return {
        "clip": name or str(clip.seed),
        "psnr": psnr(video, clip.frames, mask),
        "ssim": ssim(video, clip.frames, mask),
        "region_color_error": float(region_color_error(video, clip).mean()),
        "region_color_error_per_sprite": region_color_error(video, clip).tolist(),
        "temporal_consistency": temporal_consistency(video, clip.frames),
    }


def evaluate(videos, clips, masked: bool = True, names=None) -> MetricReport:
    names = names or [str(c.seed) for c in clips]
    rows = [evaluate_clip(v, c, masked, n) for v, c, n in zip(videos, clips, names)]
    res = (clips[0].H, clips[0].W) if clips else (0, 0)
    return MetricReport(rows, masked, res)
