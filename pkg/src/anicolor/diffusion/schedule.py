"""Noise schedules and the forward (noising) process."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

ALPHA_BAR_FIRST_MIN = 0.99
ALPHA_BAR_LAST_MAX = 0.01


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class DiffusionSchedule:
    """Cumulative signal coefficients; ``alpha_bar[0]`` is the least noisy step.

    Steps are indexed ``0 .. n_steps - 1`` throughout the package.
    """

    alpha_bar: np.ndarray
    kind: str = "cosine"

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        object.__setattr__(self, "alpha_bar", ab)
        if ab.ndim != 1 or len(ab) < 2:
            raise ScheduleError("schedule needs at least 2 steps")
        if not np.all((ab > 0) & (ab < 1)):
            raise ScheduleError("alpha_bar must lie in (0, 1)")
        if not np.all(np.diff(ab) < 0):
            raise ScheduleError("alpha_bar must be strictly decreasing")
        if ab[0] < ALPHA_BAR_FIRST_MIN or ab[-1] > ALPHA_BAR_LAST_MAX:
            raise ScheduleError(
                f"endpoint bounds violated: alpha_bar[0]={ab[0]:.5f}, alpha_bar[-1]={ab[-1]:.5f}"
            )

    @property
    def n_steps(self) -> int:
        return len(self.alpha_bar)

    @property
    def alphas(self) -> np.ndarray:
        prev = np.concatenate([[1.0], self.alpha_bar[:-1]])
        return self.alpha_bar / prev

    @property
    def betas(self) -> np.ndarray:
        return 1.0 - self.alphas

    def tensor(self, dtype=torch.float32, device=None) -> torch.Tensor:
        return torch.as_tensor(self.alpha_bar, dtype=dtype, device=device)


def make_schedule(n_steps: int = 1000, kind: str = "cosine") -> DiffusionSchedule:
    """Build a schedule with ``alpha_bar`` falling from >= 0.99 to <= 0.01.

    ``cosine`` spans ``[1e-4, 0.9999]`` with the squared-cosine profile on a
    grid that always includes both ends, so tiny ``n_steps`` stay valid.
    ``linear`` uses betas linear from 1e-4 to ``0.02 * 1000 / n_steps``
    (capped at 0.999).
    """
    if n_steps < 2:
        raise ScheduleError("n_steps must be >= 2")
    if kind == "cosine":
        s = 0.008
        tau = np.linspace(0.0, 1.0, n_steps)
        f = np.cos((tau + s) / (1 + s) * math.pi / 2) ** 2
        g = (f - f[-1]) / (f[0] - f[-1])
        hi, lo = 0.9999, 1e-4
        alpha_bar = lo + (hi - lo) * g
    elif kind == "linear":
        beta_max = min(0.999, 0.02 * 1000.0 / n_steps)
        betas = np.linspace(1e-4, beta_max, n_steps)
        alpha_bar = np.cumprod(1.0 - betas)
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    return DiffusionSchedule(alpha_bar, kind)


def _broadcast(coef: torch.Tensor, ndim: int) -> torch.Tensor:
    return coef.reshape(coef.shape + (1,) * (ndim - coef.ndim))


def forward_diffuse(z0: torch.Tensor, t, eps: torch.Tensor, schedule: DiffusionSchedule) -> torch.Tensor:
    """``sqrt(ab_t) * z0 + sqrt(1 - ab_t) * eps``; ``t`` is a step index or one per batch item."""
    if z0.shape != eps.shape:
        raise ValueError(f"shape mismatch: z0 {tuple(z0.shape)} vs eps {tuple(eps.shape)}")
    t = torch.as_tensor(t, dtype=torch.long)
    if torch.any(t < 0) or torch.any(t >= schedule.n_steps):
        raise ValueError(f"step index out of range [0, {schedule.n_steps})")
    ab = schedule.tensor(torch.float64)[t].to(z0.dtype)
    if ab.ndim:
        ab = _broadcast(ab, z0.ndim)
    return ab.sqrt() * z0 + (1 - ab).sqrt() * eps
