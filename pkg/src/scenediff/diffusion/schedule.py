"""Forward-process noise schedules.

All per-timestep arrays are indexed by t in 1..T; position 0 of each array
corresponds to t=1.  Timesteps passed to :func:`q_sample` and to the gather
helpers use the same 1-based convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed diffusion coefficients for a fixed number of steps."""

    kind: str
    num_steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    # posterior q(x_{t-1} | x_t, x_0)
    posterior_variance: np.ndarray
    posterior_log_variance_clipped: np.ndarray
    posterior_mean_coef1: np.ndarray
    posterior_mean_coef2: np.ndarray

    def alpha_bar_prev(self, t: int) -> float:
        # alpha_bar at t-1, with the t=1 case defined as 1.0
        if t < 1 or t > self.num_steps:
            raise ScheduleError(f"timestep {t} outside 1..{self.num_steps}")
        return 1.0 if t == 1 else float(self.alpha_bars[t - 2])


def _cosine_alpha_bar(t: np.ndarray, offset: float = 0.008) -> np.ndarray:
    return np.cos((t + offset) / (1.0 + offset) * np.pi / 2.0) ** 2


def make_schedule(num_steps: int, kind: str = "linear") -> NoiseSchedule:
    """Build a schedule; ``kind`` is ``"linear"`` or ``"cosine"``.

    The linear schedule is scaled so that 1000 steps span 1e-4 .. 0.02 and
    other step counts keep a comparable total noise budget.
    """
    if num_steps < 2:
        raise ScheduleError(f"num_steps must be >= 2, got {num_steps}")
    if kind == "linear":
        scale = 1000.0 / num_steps
        betas = np.linspace(1e-4 * scale, 0.02 * scale, num_steps, dtype=np.float64)
    elif kind == "cosine":
        steps = np.arange(num_steps + 1, dtype=np.float64) / num_steps
        bars = _cosine_alpha_bar(steps)
        betas = 1.0 - bars[1:] / bars[:-1]
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")

    betas = np.clip(betas, 1e-8, 0.999)
    if np.any(np.diff(betas) < -1e-12):
        raise ScheduleError("betas must be non-decreasing")

    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    if alpha_bars[-1] > 0.1:
        raise ScheduleError(
            f"schedule too weak: alpha_bar at final step is {alpha_bars[-1]:.4f}"
        )

    alpha_bars_prev = np.concatenate([[1.0], alpha_bars[:-1]])
    posterior_variance = betas * (1.0 - alpha_bars_prev) / (1.0 - alpha_bars)
    # variance at t=1 is zero; clip to the next value before taking logs
    clipped = posterior_variance.copy()
    clipped[0] = posterior_variance[1]
    posterior_log_variance_clipped = np.log(clipped)
    posterior_mean_coef1 = betas * np.sqrt(alpha_bars_prev) / (1.0 - alpha_bars)
    posterior_mean_coef2 = (1.0 - alpha_bars_prev) * np.sqrt(alphas) / (1.0 - alpha_bars)

    return NoiseSchedule(
        kind=kind,
        num_steps=num_steps,
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        posterior_variance=posterior_variance,
        posterior_log_variance_clipped=posterior_log_variance_clipped,
        posterior_mean_coef1=posterior_mean_coef1,
        posterior_mean_coef2=posterior_mean_coef2,
    )


def gather(values: np.ndarray, t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """Index a per-timestep array with a batch of 1-based timesteps.

    Returns a tensor shaped (B, 1, 1, ...) that broadcasts against ``like``.
    """
    if t.dim() != 1:
        raise ScheduleError(f"timesteps must be a 1-d batch, got shape {tuple(t.shape)}")
    idx = t.to(torch.long) - 1
    if torch.any(idx < 0) or torch.any(idx >= len(values)):
        raise ScheduleError("timestep outside schedule range")
    out = torch.from_numpy(values).to(device=like.device, dtype=like.dtype)[idx]
    return out.reshape(-1, *([1] * (like.dim() - 1)))


def q_sample(
    x0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """Diffuse clean samples to timestep ``t``:

        x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps
    """
    if x0.shape != eps.shape:
        raise ScheduleError(f"x0 shape {tuple(x0.shape)} != eps shape {tuple(eps.shape)}")
    bars = gather(schedule.alpha_bars, t, x0)
    return torch.sqrt(bars) * x0 + torch.sqrt(1.0 - bars) * eps
