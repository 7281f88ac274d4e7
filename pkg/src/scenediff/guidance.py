"""Classifier-free guidance combinators for multiple condition channels.

Given the denoiser's unconditional prediction e0 and conditional predictions,
sampling extrapolates along condition directions:

  single condition:  e0 + s * (e_c - e0)
  multi-scale:       e0 + sum_i s_i * (e_ci - e0)   (one pass per condition)
  fast joint:        e0 + s * (e_joint - e0)        (two passes total)

The combinators are shape-generic: they work on numpy arrays and torch
tensors alike, and are pure arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np


class GuidanceError(ValueError):
    pass


MULTI = "multi"
FAST = "fast"


@dataclass(frozen=True)
class GuidanceSpec:
    """Guidance mode plus its scales.

    MULTI carries one scale per condition channel (here: global text, scene);
    FAST carries a single joint scale. The default is the fast variant at
    s = 3, which needs only two denoiser passes per step.
    """

    mode: str = FAST
    scales: tuple[float, ...] = (3.0,)

    def __post_init__(self):
        if self.mode not in (MULTI, FAST):
            raise GuidanceError(f"unknown guidance mode {self.mode!r}")
        scales = tuple(float(s) for s in self.scales)
        if self.mode == FAST and len(scales) != 1:
            raise GuidanceError("fast guidance takes exactly one scale")
        if not scales:
            raise GuidanceError("guidance needs at least one scale")
        if not all(np.isfinite(s) and s >= 0 for s in scales):
            raise GuidanceError(f"scales must be finite and non-negative: {scales}")
        object.__setattr__(self, "scales", scales)

    @classmethod
    def from_dict(cls, doc: dict) -> "GuidanceSpec":
        try:
            mode = doc["mode"]
            scales = doc["scales"]
            if mode == FAST:
                return cls(mode=FAST, scales=(scales["joint"],))
            if mode == MULTI:
                return cls(mode=MULTI, scales=(scales["global"], scales["scene"]))
        except (KeyError, TypeError):
            raise GuidanceError(f"malformed guidance spec: {doc!r}") from None
        raise GuidanceError(f"unknown guidance mode {mode!r}")

    def to_dict(self) -> dict:
        if self.mode == FAST:
            return {"mode": FAST, "scales": {"joint": self.scales[0]}}
        return {"mode": MULTI, "scales": {"global": self.scales[0], "scene": self.scales[1]}}


@dataclass(frozen=True)
class ConditionSet:
    """The two condition channels; None marks a dropped (null) condition.

    The null encodings live at the model boundary: a dropped scene tensor is
    materialized as the all-zero tensor (so an empty scene and a fully
    dropped one coincide), while a dropped global text becomes the embedder's
    reserved null-text vector (a zero text embedding never occurs naturally).
    """

    global_text: Optional[np.ndarray] = None
    st: Optional[object] = None  # SpatioTextualTensor or raw H x W x d array

    def null(self) -> "ConditionSet":
        return ConditionSet(global_text=None, st=None)


def _check_shapes(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise GuidanceError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def cfg_single(eps_uncond, eps_cond, s: float):
    """eps_uncond + s * (eps_cond - eps_uncond)."""
    _check_shapes(eps_uncond, eps_cond)
    return eps_uncond + s * (eps_cond - eps_uncond)


def cfg_multi(eps_uncond, eps_conds, scales):
    """Combine per-condition directions with one scale each."""
    if len(eps_conds) < 1:
        raise GuidanceError("need at least one conditional prediction")
    if len(eps_conds) != len(scales):
        raise GuidanceError(f"{len(eps_conds)} predictions but {len(scales)} scales")
    out = eps_uncond
    for eps_c, s in zip(eps_conds, scales):
        _check_shapes(eps_uncond, eps_c)
        out = out + s * (eps_c - eps_uncond)
    return out


def cfg_fast(eps_uncond, eps_joint, s: float):
    """Extrapolate along the single joint-conditional direction."""
    _check_shapes(eps_uncond, eps_joint)
    return eps_uncond + s * (eps_joint - eps_uncond)


def required_forward_passes(spec: GuidanceSpec, n_conditions: int) -> int:
    """Denoiser executions per sampling step: N+1 for multi, 2 for fast."""
    if n_conditions < 1:
        raise GuidanceError("n_conditions must be >= 1")
    return 2 if spec.mode == FAST else n_conditions + 1


def dropout_conditions(conds: ConditionSet, p: float, rng: np.random.Generator) -> ConditionSet:
    """Independently replace each condition with its null at probability p.

    Training with independent dropout is what makes every conditional /
    unconditional combination available to the guidance combinators at
    sampling time.
    """
    if not 0.0 <= p <= 1.0:
        raise GuidanceError(f"dropout probability {p} outside [0, 1]")
    out = conds
    if rng.random() < p:
        out = replace(out, global_text=None)
    if rng.random() < p:
        out = replace(out, st=None)
    return out
