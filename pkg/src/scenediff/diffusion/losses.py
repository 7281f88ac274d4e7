"""Training objectives.

Pixel-space models train on the hybrid objective: an MSE noise-prediction
term plus a small variational term that fits the learned per-pixel variance.
Following the convention of learned-variance DDPMs, the variational term's
gradients flow only through the variance channels; the noise prediction is
detached there.  Latent-space models use plain MSE on encoded latents with
the codec frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
import torch

from .schedule import NoiseSchedule, gather, q_sample


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class HybridLoss:
    total: torch.Tensor
    simple: torch.Tensor
    vlb: torch.Tensor


def _model_input(x_t: torch.Tensor, st: Optional[torch.Tensor]) -> torch.Tensor:
    if st is None:
        return x_t
    if st.dim() != 4 or st.shape[0] != x_t.shape[0] or st.shape[2:] != x_t.shape[2:]:
        raise LossError(
            f"conditioning channels shaped {tuple(st.shape)} do not match x_t {tuple(x_t.shape)}"
        )
    return torch.cat([x_t, st.to(x_t.dtype)], dim=1)


def _forward(model, x0, st, cond_text, t, eps, schedule):
    if x0.dim() != 4:
        raise LossError(f"x0 must be (B, C, H, W), got {tuple(x0.shape)}")
    if eps.shape != x0.shape:
        raise LossError(f"eps shape {tuple(eps.shape)} != x0 shape {tuple(x0.shape)}")
    x_t = q_sample(x0, t, eps, schedule)
    out = model(_model_input(x_t, st), t, cond_text)
    return x_t, out


def loss_simple(model, x0, st, cond_text, t, eps, schedule: NoiseSchedule) -> torch.Tensor:
    """Noise-prediction MSE: mean over batch and all tensor positions."""
    _, out = _forward(model, x0, st, cond_text, t, eps, schedule)
    eps_hat = out[:, : x0.shape[1]]
    return torch.mean((eps - eps_hat) ** 2)


def _normal_kl(mean1, logvar1, mean2, logvar2):
    return 0.5 * (
        logvar2 - logvar1 + torch.exp(logvar1 - logvar2) + (mean1 - mean2) ** 2 * torch.exp(-logvar2) - 1.0
    )


def _approx_std_normal_cdf(x):
    return 0.5 * (1.0 + torch.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def _discretized_gaussian_log_likelihood(x, means, log_scales):
    # x in [-1, 1] quantized to 255 bins
    centered = x - means
    inv_stdv = torch.exp(-log_scales)
    cdf_plus = _approx_std_normal_cdf(inv_stdv * (centered + 1.0 / 255.0))
    cdf_min = _approx_std_normal_cdf(inv_stdv * (centered - 1.0 / 255.0))
    log_cdf_plus = torch.log(cdf_plus.clamp(min=1e-12))
    log_one_minus_cdf_min = torch.log((1.0 - cdf_min).clamp(min=1e-12))
    cdf_delta = cdf_plus - cdf_min
    log_probs = torch.where(
        x < -0.999,
        log_cdf_plus,
        torch.where(x > 0.999, log_one_minus_cdf_min, torch.log(cdf_delta.clamp(min=1e-12))),
    )
    return log_probs


def _vlb_term(x0, x_t, t, eps_hat, var_weights, schedule: NoiseSchedule) -> torch.Tensor:
    """Per-batch variational term (nats, averaged over positions then batch).

    Uses the noise prediction only to locate the mean (detached upstream);
    learns the variance by interpolating between beta_t and the clipped
    posterior variance in log space.
    """
    bars = gather(schedule.alpha_bars, t, x_t)
    x0_pred = (x_t - torch.sqrt(1.0 - bars) * eps_hat) / torch.sqrt(bars)

    coef1 = gather(schedule.posterior_mean_coef1, t, x_t)
    coef2 = gather(schedule.posterior_mean_coef2, t, x_t)
    mean_pred = coef1 * x0_pred + coef2 * x_t
    mean_true = coef1 * x0 + coef2 * x_t

    logvar_true = gather(schedule.posterior_log_variance_clipped, t, x_t)
    frac = (var_weights + 1.0) / 2.0
    log_beta = gather(np.log(schedule.betas), t, x_t)
    logvar_model = frac * log_beta + (1.0 - frac) * logvar_true

    kl = _normal_kl(mean_true, logvar_true, mean_pred, logvar_model)
    kl = kl.reshape(kl.shape[0], -1).mean(dim=1)
    nll = -_discretized_gaussian_log_likelihood(x0, mean_pred, 0.5 * logvar_model)
    nll = nll.reshape(nll.shape[0], -1).mean(dim=1)

    term = torch.where(t.to(kl.device) == 1, nll, kl)
    return term.mean()


def loss_vlb(model, x0, st, cond_text, t, eps, schedule: NoiseSchedule) -> torch.Tensor:
    """Standalone variational term; requires a model with variance channels."""
    x_t, out = _forward(model, x0, st, cond_text, t, eps, schedule)
    c = x0.shape[1]
    if out.shape[1] < 2 * c:
        raise LossError("model has no variance channels; variational term undefined")
    return _vlb_term(x0, x_t, t, out[:, :c].detach(), out[:, c : 2 * c], schedule)


def loss_hybrid(model, batch: Mapping, lam: float, schedule: NoiseSchedule) -> HybridLoss:
    """Combined objective; ``total`` is exactly ``simple + lam * vlb``.

    ``batch`` maps ``x0``, ``st``, ``cond_text``, ``t``, ``eps`` to tensors
    (``st`` may be None for an unextended model).  One forward pass serves
    both terms.
    """
    if lam < 0:
        raise LossError(f"lam must be >= 0, got {lam}")
    x0 = batch["x0"]
    x_t, out = _forward(model, x0, batch.get("st"), batch.get("cond_text"), batch["t"], batch["eps"], schedule)
    c = x0.shape[1]
    eps_hat = out[:, :c]
    simple = torch.mean((batch["eps"] - eps_hat) ** 2)
    if out.shape[1] >= 2 * c:
        vlb = _vlb_term(x0, x_t, batch["t"], eps_hat.detach(), out[:, c : 2 * c], schedule)
    elif lam == 0:
        vlb = torch.zeros((), dtype=simple.dtype)
    else:
        raise LossError("model has no variance channels; variational term undefined")
    total = simple + lam * vlb
    return HybridLoss(total=total, simple=simple, vlb=vlb)


def loss_latent(
    model, codec, x0, st_resampled, cond_text, t, eps, schedule: NoiseSchedule
) -> torch.Tensor:
    """MSE objective in latent space; the codec stays frozen.

    ``x0`` holds images in [0, 1]; ``eps`` and ``st_resampled`` live at
    latent resolution.
    """
    if x0.dim() != 4:
        raise LossError(f"x0 must be (B, C, H, W), got {tuple(x0.shape)}")
    with torch.no_grad():
        z0 = codec.encode(x0)
    factor = codec.factor
    expected = (x0.shape[2] // factor, x0.shape[3] // factor)
    if eps.shape != z0.shape:
        raise LossError(f"eps shape {tuple(eps.shape)} != latent shape {tuple(z0.shape)}")
    if st_resampled is not None and tuple(st_resampled.shape[2:]) != expected:
        raise LossError(
            f"conditioning at {tuple(st_resampled.shape[2:])} but latents are {expected}; "
            "resample to latent resolution first"
        )
    return loss_simple(model, z0, st_resampled, cond_text, t, eps, schedule)
