"""Training objective and samplers."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from .model import ControlInputs, LayoutError, ModelState, denoise, validate_layout
from .schedule import DiffusionSchedule, forward_diffuse

SAMPLERS = ("ancestral", "deterministic")


class DivergenceError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


LOSS_WEIGHTINGS = ("eps", "v")


def loss(
    state: ModelState,
    z0: torch.Tensor,
    ref: torch.Tensor,
    controls: ControlInputs,
    schedule: DiffusionSchedule,
    generator: torch.Generator | None = None,
    t: torch.Tensor | None = None,
    eps: torch.Tensor | None = None,
    weighting: str = "eps",
) -> torch.Tensor:
    """Mean squared error between injected noise and the model's prediction.

    ``t`` and ``eps`` are drawn from ``generator`` unless given.  Call
    ``.backward()`` on the result for parameter gradients.

    ``weighting="v"`` scales each sample's error by 1 / alpha_bar_t, which
    equals the squared error on the velocity target.  Plain noise error
    weights the implied clean-frame error by the signal-to-noise ratio, so
    high-noise steps, where colour is decided, carry almost no gradient.
    """
    if weighting not in LOSS_WEIGHTINGS:
        raise ValueError(f"unknown loss weighting {weighting!r}")
    b = z0.shape[0]
    if t is None:
        t = torch.randint(0, schedule.n_steps, (b,), generator=generator)
    if eps is None:
        eps = torch.randn(z0.shape, generator=generator, dtype=z0.dtype)
    z_t = forward_diffuse(z0, t, eps, schedule)
    eps_hat = denoise(state, z_t, t, ref, controls, schedule.alpha_bar)
    if weighting == "eps":
        value = F.mse_loss(eps_hat, eps)
    else:
        per_sample = (eps_hat - eps).pow(2).flatten(1).mean(1)
        ab = torch.as_tensor(schedule.alpha_bar, dtype=per_sample.dtype)[t]
        value = (per_sample / ab).mean()
    if not torch.isfinite(value):
        raise DivergenceError(
            f"non-finite loss at step {state.step}",
            {"step": state.step, "t": t.tolist(), "eps_hat_abs_max": float(eps_hat.detach().abs().nan_to_num(0).max())},
        )
    return value


def sampling_timesteps(schedule: DiffusionSchedule, steps: int) -> list[int]:
    if not 1 <= steps <= schedule.n_steps:
        raise ValueError(f"steps must be in [1, {schedule.n_steps}]")
    ts = np.unique(np.round(np.linspace(0, schedule.n_steps - 1, steps)).astype(int))[::-1]
    return [int(t) for t in ts]


@torch.no_grad()
def sample(
    state: ModelState,
    ref: torch.Tensor,
    controls: ControlInputs,
    schedule: DiffusionSchedule,
    sampler: str = "deterministic",
    steps: int = 50,
    seed: int = 0,
) -> torch.Tensor:
    """Generate frames (B x 3 x T x H x W in [-1, 1]) by DDIM-style updates.

    ``deterministic`` is eta = 0; ``ancestral`` is eta = 1.  All noise comes
    from a generator seeded with ``seed``.
    """
    if sampler not in SAMPLERS:
        raise ValueError(f"unknown sampler {sampler!r}")
    b, _, T, H, W = controls.sketch.shape
    dtype = state.dtype
    controls = controls.to(dtype)
    ref = ref.to(dtype)
    gen = torch.Generator().manual_seed(int(seed))
    x = torch.randn((b, state.config.frame_channels, T, H, W), generator=gen, dtype=dtype)
    validate_layout(state, x, ref, controls)
    eta = 0.0 if sampler == "deterministic" else 1.0
    ab = schedule.alpha_bar
    ts = sampling_timesteps(schedule, steps)
    state.model.eval()
    for i, t in enumerate(ts):
        a_t = float(ab[t])
        a_s = float(ab[ts[i + 1]]) if i + 1 < len(ts) else 1.0
        eps = denoise(state, x, t, ref, controls, ab)
        x0 = ((x - (1 - a_t) ** 0.5 * eps) / a_t**0.5).clamp(-1, 1)
        eps = (x - a_t**0.5 * x0) / (1 - a_t) ** 0.5
        if a_s >= 1.0:
            x = x0
            break
        sigma = eta * ((1 - a_s) / (1 - a_t)) ** 0.5 * (1 - a_t / a_s) ** 0.5
        x = a_s**0.5 * x0 + max(1 - a_s - sigma**2, 0.0) ** 0.5 * eps
        if sigma > 0:
            x = x + sigma * torch.randn(x.shape, generator=gen, dtype=dtype)
    return x


def to_video(x: torch.Tensor) -> np.ndarray:
    """B x 3 x T x H x W in [-1, 1] -> B x T x H x W x 3 float32 in [0, 1]."""
    v = ((x.detach().to(torch.float64) + 1) / 2).clamp(0, 1)
    return v.permute(0, 2, 3, 4, 1).numpy().astype(np.float32)


__all__ = ["DivergenceError", "LayoutError", "loss", "sample", "sampling_timesteps", "to_video"]
