"""Deterministic DDIM sampling under multi-conditional guidance.

Every step runs the denoiser once per required condition variant and
combines the noise predictions with the guidance combinators.  Passes whose
scale contributes nothing (s=0 terms, or the unconditional pass under fast
guidance at s=1) are skipped; the result is unchanged because the skipped
term is exactly zero.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import torch

from ..guidance import FAST, ConditionSet, GuidanceSpec, cfg_fast, cfg_multi
from ..representation import SpatioTextualTensor
from .checkpoint import DiffusionCheckpoint


class SamplingError(ValueError):
    pass


def _tau_sequence(num_steps: int, steps: int) -> np.ndarray:
    if steps < 1:
        raise SamplingError(f"steps must be >= 1, got {steps}")
    if steps > num_steps:
        raise SamplingError(f"steps={steps} exceeds schedule length {num_steps}")
    taus = np.unique(np.round(np.linspace(1, num_steps, steps)).astype(np.int64))
    return taus[::-1]


def _st_channels(ckpt: DiffusionCheckpoint, cond_st) -> torch.Tensor:
    h, w = ckpt.latent_resolution
    d = ckpt.d_st
    if cond_st is None:
        return torch.zeros(d, h, w, dtype=torch.float32)
    arr = cond_st.data if isinstance(cond_st, SpatioTextualTensor) else np.asarray(cond_st)
    H, W = ckpt.resolution
    if arr.shape != (H, W, d):
        raise SamplingError(
            f"scene tensor shaped {arr.shape} does not match checkpoint "
            f"(expected {(H, W, d)})"
        )
    if (h, w) != (H, W):
        arr = arr[:: H // h, :: W // w]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).float()


def _text_vector(ckpt: DiffusionCheckpoint, vec) -> torch.Tensor:
    d = ckpt.denoiser.d_text
    if vec is None:
        vec = ckpt.embedder.null_text_vector
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (d,):
        raise SamplingError(f"text embedding shaped {vec.shape}, checkpoint expects ({d},)")
    return torch.from_numpy(vec).float()


def ddim_sample_batch(
    checkpoint: DiffusionCheckpoint,
    conditions: Sequence[ConditionSet],
    guidance: Optional[GuidanceSpec] = None,
    steps: Optional[int] = None,
    seed: int = 0,
    noise: Optional[torch.Tensor] = None,
) -> np.ndarray:
    """Sample a batch of images, one per condition set; returns (B, H, W, 3) in [0, 1].

    ``noise`` overrides the seeded initial draw (shape (B, C, h, w)); this
    keeps per-input determinism independent of batch composition.
    """
    if guidance is None:
        guidance = GuidanceSpec()
    if steps is None:
        steps = min(checkpoint.default_sample_steps(), checkpoint.schedule.num_steps)
    if len(conditions) == 0:
        raise SamplingError("empty condition batch")

    model = checkpoint.denoiser
    schedule = checkpoint.schedule
    b = len(conditions)
    c = model.space_channels
    h, w = checkpoint.latent_resolution
    d_st = model.cond_channels

    text = torch.stack([_text_vector(checkpoint, cs.global_text) for cs in conditions])
    null_text = _text_vector(checkpoint, None).expand(b, -1)
    if d_st > 0:
        st = torch.stack([_st_channels(checkpoint, cs.st) for cs in conditions])
        zero_st = torch.zeros_like(st)
    else:
        if any(cs.st is not None for cs in conditions):
            raise SamplingError("checkpoint has no scene channels but a scene was given")
        st = zero_st = None

    taus = _tau_sequence(schedule.num_steps, steps)
    bars = schedule.alpha_bars

    if noise is None:
        gen = torch.Generator().manual_seed(seed)
        x = torch.randn(b, c, h, w, generator=gen)
    else:
        x = torch.as_tensor(noise, dtype=torch.float32).clone()
        if x.shape != (b, c, h, w):
            raise SamplingError(f"noise shaped {tuple(x.shape)}, expected {(b, c, h, w)}")

    def run(text_b, st_b, t_b):
        inp = x if st_b is None else torch.cat([x, st_b], dim=1)
        return model(inp, t_b, text_b)[:, :c]

    with torch.no_grad():
        for i, t in enumerate(taus):
            t_b = torch.full((b,), int(t), dtype=torch.long)
            if guidance.mode == FAST:
                (s,) = guidance.scales
                if s == 1.0:
                    eps = run(text, st, t_b)
                else:
                    e0 = run(null_text, zero_st, t_b)
                    eps = cfg_fast(e0, run(text, st, t_b), s)
            else:
                s_text, s_scene = guidance.scales
                e0 = run(null_text, zero_st, t_b)
                conds, scales = [], []
                if s_text != 0.0:
                    conds.append(run(text, zero_st, t_b))
                    scales.append(s_text)
                if s_scene != 0.0:
                    conds.append(run(null_text, st, t_b))
                    scales.append(s_scene)
                eps = cfg_multi(e0, conds, scales) if conds else e0

            a_t = float(bars[t - 1])
            t_prev = int(taus[i + 1]) if i + 1 < len(taus) else 0
            a_prev = float(bars[t_prev - 1]) if t_prev >= 1 else 1.0
            x0_pred = (x - np.sqrt(1.0 - a_t) * eps) / np.sqrt(a_t)
            if checkpoint.space == "pixel":
                x0_pred = torch.clamp(x0_pred, -1.0, 1.0)
                eps = (x - np.sqrt(a_t) * x0_pred) / np.sqrt(1.0 - a_t)
            x = np.sqrt(a_prev) * x0_pred + np.sqrt(1.0 - a_prev) * eps

        if checkpoint.space == "latent":
            out = checkpoint.codec.decode(x)
        else:
            out = torch.clamp((x + 1.0) / 2.0, 0.0, 1.0)

    return out.permute(0, 2, 3, 1).numpy().astype(np.float64)


def ddim_sample(
    checkpoint: DiffusionCheckpoint,
    conditions: ConditionSet,
    guidance: Optional[GuidanceSpec] = None,
    steps: Optional[int] = None,
    seed: int = 0,
) -> np.ndarray:
    """Sample one H x W x 3 image in [0, 1] for a single condition set."""
    return ddim_sample_batch(checkpoint, [conditions], guidance, steps, seed)[0]
