"""Video denoiser with a ControlNet-style control branch.

Tensors are laid out ``(batch, channels, frames, height, width)``.  Spatial
layers run frame by frame; temporal layers mix along the frame axis for each
pixel.  The main branch sees the noisy frames concatenated with the
reference image replicated over time.  The control branch mirrors the main
encoder, reads sketch + point maps (+ heatmap) + reference, and adds its
features into the main encoder through zero-initialised 1x1 convolutions.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F
from einops import rearrange
from torch import nn

STAGES = ("dense", "sparse")


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 2)
    temporal_conv: bool = True
    temporal_attention_levels: tuple[int, ...] = (2,)
    spatial_attention_levels: tuple[int, ...] = (2,)
    time_embed_dim: int = 128
    heads: int = 4
    norm_groups: int = 8
    frame_channels: int = 3
    ref_channels: int = 3
    sketch_channels: int = 1
    point_map_channels: int = 2
    heatmap_channels: int = 1
    max_frames: int = 64
    # "v": the network emits v and denoise() converts it to a noise estimate;
    # "eps": the network emits the noise estimate directly.
    output: str = "v"

    def __post_init__(self):
        if self.output not in ("v", "eps"):
            raise ValueError(f"unknown output parameterisation {self.output!r}")
        n = len(self.channel_mults)
        for lvl in (*self.temporal_attention_levels, *self.spatial_attention_levels):
            if not 0 <= lvl < n:
                raise ValueError(f"attention level {lvl} outside 0..{n - 1}")

    @property
    def levels(self) -> int:
        return len(self.channel_mults)

    def channels(self, level: int) -> int:
        return self.base_channels * self.channel_mults[level]

    def control_channels(self, stage: str) -> int:
        extra = self.heatmap_channels if stage == "sparse" else 0
        return self.sketch_channels + self.point_map_channels + extra + self.ref_channels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        d = dict(d)
        for key in ("channel_mults", "temporal_attention_levels", "spatial_attention_levels"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _groups(channels: int, wanted: int) -> int:
    g = min(wanted, channels)
    while channels % g:
        g -= 1
    return g


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def zero_module(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, emb_dim: int, groups: int, temporal: bool):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_ch, groups), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb = nn.Linear(emb_dim, out_ch)
        self.norm2 = nn.GroupNorm(_groups(out_ch, groups), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()
        self.temporal = nn.Conv1d(out_ch, out_ch, 3, padding=1) if temporal else None
        if temporal:
            self.temporal_norm = nn.GroupNorm(_groups(out_ch, groups), out_ch)

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        b, _, t, hh, ww = x.shape
        h2 = rearrange(x, "b c t h w -> (b t) c h w")
        h = self.conv1(F.silu(self.norm1(h2)))
        h = h + self.emb(F.silu(emb)).repeat_interleave(t, dim=0)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        h = h + self.skip(h2)
        h = rearrange(h, "(b t) c h w -> b c t h w", b=b)
        if self.temporal is not None:
            ht = rearrange(h, "b c t h w -> (b h w) c t")
            ht = self.temporal(F.silu(self.temporal_norm(ht)))
            h = h + rearrange(ht, "(b h w) c t -> b c t h w", b=b, h=hh, w=ww)
        return h


class SpatialAttention(nn.Module):
    """Self-attention over the pixels of each frame."""

    def __init__(self, channels: int, heads: int, groups: int):
        super().__init__()
        self.heads = heads if channels % heads == 0 else 1
        self.norm = nn.GroupNorm(_groups(channels, groups), channels)
        self.qkv = nn.Linear(channels, 3 * channels)
        self.out = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, t, hh, ww = x.shape
        tokens = rearrange(self.norm(rearrange(x, "b c t h w -> (b t) c h w")), "n c h w -> n (h w) c")
        q, k, v = rearrange(self.qkv(tokens), "n l (three k d) -> three n k l d", three=3, k=self.heads)
        o = F.scaled_dot_product_attention(q, k, v)
        o = self.out(rearrange(o, "n k l d -> n l (k d)"))
        o = rearrange(o, "(b t) (h w) c -> b c t h w", b=b, h=hh)
        return x + o


class TemporalAttention(nn.Module):
    """Self-attention along frames at each pixel, with sinusoidal frame positions."""

    def __init__(self, channels: int, heads: int, groups: int):
        super().__init__()
        self.heads = heads if channels % heads == 0 else 1
        self.norm = nn.GroupNorm(_groups(channels, groups), channels)
        self.qkv = nn.Linear(channels, 3 * channels)
        self.out = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, t, hh, ww = x.shape
        tokens = rearrange(self.norm(rearrange(x, "b c t h w -> (b t) c h w")), "(b t) c h w -> (b h w) t c", b=b)
        pos = timestep_embedding(torch.arange(t), c).to(tokens.dtype)
        q, k, v = rearrange(self.qkv(tokens + pos), "n l (three k d) -> three n k l d", three=3, k=self.heads)
        o = F.scaled_dot_product_attention(q, k, v)
        o = self.out(rearrange(o, "n k l d -> n l (k d)"))
        o = rearrange(o, "(b h w) t c -> b c t h w", b=b, h=hh)
        return x + o


class Level(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, level: int, cfg: DenoiserConfig):
        super().__init__()
        temporal = cfg.temporal_conv
        self.res = ResBlock(in_ch, out_ch, cfg.time_embed_dim, cfg.norm_groups, temporal)
        self.spatial = SpatialAttention(out_ch, cfg.heads, cfg.norm_groups) if level in cfg.spatial_attention_levels else None
        self.temporal = TemporalAttention(out_ch, cfg.heads, cfg.norm_groups) if level in cfg.temporal_attention_levels else None

    def forward(self, x, emb):
        x = self.res(x, emb)
        if self.spatial is not None:
            x = self.spatial(x)
        if self.temporal is not None:
            x = self.temporal(x)
        return x


def _per_frame(fn, x: torch.Tensor) -> torch.Tensor:
    b = x.shape[0]
    y = fn(rearrange(x, "b c t h w -> (b t) c h w"))
    return rearrange(y, "(b t) c h w -> b c t h w", b=b)


class Encoder(nn.Module):
    """Stack of levels with strided downsampling; returns per-level features and the bottleneck."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.levels = nn.ModuleList()
        self.down = nn.ModuleList()
        ch = cfg.base_channels
        for i in range(cfg.levels):
            out = cfg.channels(i)
            self.levels.append(Level(ch, out, i, cfg))
            ch = out
            if i < cfg.levels - 1:
                self.down.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
        last = cfg.levels - 1
        self.mid1 = ResBlock(ch, ch, cfg.time_embed_dim, cfg.norm_groups, cfg.temporal_conv)
        self.mid_attn = Level(ch, ch, last, cfg)
        self.out_channels = ch

    def forward(self, h, emb, residuals=None):
        feats = []
        for i, level in enumerate(self.levels):
            h = level(h, emb)
            if residuals is not None:
                h = h + residuals[i]
            feats.append(h)
            if i < len(self.down):
                h = _per_frame(self.down[i], h)
        h = self.mid_attn(self.mid1(h, emb), emb)
        if residuals is not None:
            h = h + residuals[-1]
        return feats, h


class ControlBranch(nn.Module):
    def __init__(self, cfg: DenoiserConfig, control_channels: int):
        super().__init__()
        in_ch = cfg.frame_channels + cfg.ref_channels
        self.conv_in = nn.Conv2d(in_ch, cfg.base_channels, 3, padding=1)
        self.hint = nn.Sequential(
            nn.Conv2d(control_channels, cfg.base_channels, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(cfg.base_channels, cfg.base_channels, 3, padding=1),
        )
        self.encoder = Encoder(cfg)
        self.zero_convs = nn.ModuleList(
            zero_module(nn.Conv2d(cfg.channels(i), cfg.channels(i), 1)) for i in range(cfg.levels)
        )
        self.zero_mid = zero_module(nn.Conv2d(self.encoder.out_channels, self.encoder.out_channels, 1))

    def forward(self, x, control, emb):
        h = _per_frame(self.conv_in, x) + _per_frame(self.hint, control)
        feats, mid = self.encoder(h, emb)
        res = [_per_frame(zc, f) for zc, f in zip(self.zero_convs, feats)]
        res.append(_per_frame(self.zero_mid, mid))
        return res


class VideoDenoiser(nn.Module):
    """Noise predictor ``eps(z_t; t, reference, controls)``."""

    def __init__(self, cfg: DenoiserConfig, stage: str = "dense"):
        super().__init__()
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        self.cfg = cfg
        self.stage = stage
        emb_dim = cfg.time_embed_dim
        self.time_mlp = nn.Sequential(nn.Linear(emb_dim, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim))
        self.conv_in = nn.Conv2d(cfg.frame_channels + cfg.ref_channels, cfg.base_channels, 3, padding=1)
        self.encoder = Encoder(cfg)
        self.control = ControlBranch(cfg, cfg.control_channels(stage))
        self.up_levels = nn.ModuleList()
        self.up = nn.ModuleList()
        ch = self.encoder.out_channels
        for i in reversed(range(cfg.levels)):
            out = cfg.channels(i)
            self.up_levels.append(Level(ch + out, out, i, cfg))
            ch = out
            if i > 0:
                self.up.append(nn.Conv2d(ch, ch, 3, padding=1))
        self.norm_out = nn.GroupNorm(_groups(ch, cfg.norm_groups), ch)
        self.conv_out = nn.Conv2d(ch, cfg.frame_channels, 3, padding=1)

    @property
    def control_channels(self) -> int:
        return self.cfg.control_channels(self.stage)

    def forward(self, z_t, t, ref, control, use_control: bool = True):
        """``z_t`` B x 3 x T x H x W, ``t`` B step indices, ``ref`` B x 3 x H x W,
        ``control`` B x C_ctrl x T x H x W (reference channels excluded)."""
        T = z_t.shape[2]
        ref_t = ref[:, :, None].expand(-1, -1, T, -1, -1)
        x = torch.cat([z_t, ref_t], dim=1)
        emb = self.time_mlp(timestep_embedding(t, self.cfg.time_embed_dim).to(z_t.dtype))
        residuals = None
        if use_control:
            residuals = self.control(x, torch.cat([control, ref_t], dim=1), emb)
        feats, h = self.encoder(_per_frame(self.conv_in, x), emb, residuals)
        up_i = 0
        for j, level in enumerate(self.up_levels):
            h = level(torch.cat([h, feats[-1 - j]], dim=1), emb)
            if j < len(self.up_levels) - 1:
                h = F.interpolate(rearrange(h, "b c t h w -> (b t) c h w"), scale_factor=2, mode="nearest")
                h = rearrange(self.up[up_i](h), "(b t) c h w -> b c t h w", b=z_t.shape[0])
                up_i += 1
        return _per_frame(lambda v: self.conv_out(F.silu(self.norm_out(v))), h)


@dataclass
class ControlInputs:
    """Conditioning tensors, B x C x T x H x W each, values already scaled for the network."""

    sketch: torch.Tensor
    point_maps: torch.Tensor
    heatmap: torch.Tensor | None = None

    def stack(self) -> torch.Tensor:
        parts = [self.sketch, self.point_maps]
        if self.heatmap is not None:
            parts.append(self.heatmap)
        return torch.cat(parts, dim=1)

    def zeros_like(self) -> "ControlInputs":
        return ControlInputs(
            torch.zeros_like(self.sketch),
            torch.zeros_like(self.point_maps),
            None if self.heatmap is None else torch.zeros_like(self.heatmap),
        )

    def to(self, dtype) -> "ControlInputs":
        return ControlInputs(
            self.sketch.to(dtype),
            self.point_maps.to(dtype),
            None if self.heatmap is None else self.heatmap.to(dtype),
        )


@dataclass
class ModelState:
    model: VideoDenoiser
    stage: str
    config: DenoiserConfig
    step: int = 0
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(cls, config: DenoiserConfig, stage: str = "dense", seed: int = 0, dtype=torch.float32) -> "ModelState":
        torch.manual_seed(seed)
        model = VideoDenoiser(config, stage).to(dtype)
        return cls(model, stage, config)

    @property
    def dtype(self):
        return next(self.model.parameters()).dtype

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.model.parameters())


def validate_layout(state: ModelState, z_t: torch.Tensor, ref: torch.Tensor, controls: ControlInputs) -> None:
    cfg = state.config
    if z_t.ndim != 5 or z_t.shape[1] != cfg.frame_channels:
        raise LayoutError(f"noisy frames: expected B x {cfg.frame_channels} x T x H x W, got {tuple(z_t.shape)}")
    b, _, T, H, W = z_t.shape
    if ref.shape != (b, cfg.ref_channels, H, W):
        raise LayoutError(f"reference: expected {(b, cfg.ref_channels, H, W)}, got {tuple(ref.shape)}")
    groups = [("sketch", controls.sketch, cfg.sketch_channels), ("point_maps", controls.point_maps, cfg.point_map_channels)]
    if state.stage == "sparse":
        if controls.heatmap is None:
            raise LayoutError("heatmap: sparse-stage model needs a heatmap channel group")
        groups.append(("heatmap", controls.heatmap, cfg.heatmap_channels))
    elif controls.heatmap is not None:
        raise LayoutError("heatmap: dense-stage model takes no heatmap channel group")
    for name, tensor, ch in groups:
        if tuple(tensor.shape) != (b, ch, T, H, W):
            raise LayoutError(f"{name}: expected {(b, ch, T, H, W)}, got {tuple(tensor.shape)}")
    down = 2 ** (cfg.levels - 1)
    if H % down or W % down:
        raise LayoutError(f"frame size {H}x{W} must be divisible by {down}")


def denoise(
    state: ModelState,
    z_t: torch.Tensor,
    t,
    ref: torch.Tensor,
    controls: ControlInputs,
    alpha_bar: torch.Tensor | None = None,
) -> torch.Tensor:
    """Predicted noise with the same shape as ``z_t``.

    With ``config.output == "v"`` the network output v is mapped to
    ``sqrt(1 - a) * z_t + sqrt(a) * v``, so ``alpha_bar`` (the schedule's
    cumulative coefficients, indexed by ``t``) is required.
    """
    validate_layout(state, z_t, ref, controls)
    t = torch.as_tensor(t, dtype=torch.long).reshape(-1)
    if t.numel() == 1 and z_t.shape[0] > 1:
        t = t.expand(z_t.shape[0])
    out = state.model(z_t, t, ref, controls.stack())
    if state.config.output == "eps":
        return out
    if alpha_bar is None:
        raise ValueError("v-output model needs alpha_bar to produce a noise estimate")
    a = torch.as_tensor(alpha_bar, dtype=z_t.dtype)[t].reshape(-1, 1, 1, 1, 1)
    return (1 - a).sqrt() * z_t + a.sqrt() * out


def expand_control_input(dense_state: ModelState) -> ModelState:
    """Sparse-stage model initialised from a dense one; the new heatmap input starts at zero."""
    if dense_state.stage != "dense":
        raise ValueError("expected a dense-stage state")
    cfg = dense_state.config
    sparse = VideoDenoiser(cfg, "sparse").to(dense_state.dtype)
    src = dense_state.model.state_dict()
    dst = sparse.state_dict()
    key = "control.hint.0.weight"
    for name, value in src.items():
        if name == key:
            w = torch.zeros_like(dst[name])
            # dense layout: sketch, point maps, reference; sparse inserts heatmap before reference
            n_pre = cfg.sketch_channels + cfg.point_map_channels
            w[:, :n_pre] = value[:, :n_pre]
            w[:, n_pre + cfg.heatmap_channels :] = value[:, n_pre:]
            dst[name] = w
        else:
            dst[name] = value.clone()
    sparse.load_state_dict(dst)
    return ModelState(sparse, "sparse", cfg, dense_state.step, dict(dense_state.meta))
