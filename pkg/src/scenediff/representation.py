"""Per-pixel embedding tensors for segment-conditioned generation.

A spatio-textual tensor places one shared unit-norm embedding vector on every
pixel of each segment and the zero vector everywhere else. The training path
derives segment vectors from image crops; the inference path derives them
from local prompts, optionally translated into image space by a prior model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embed import preprocess_segment
from .scene import RawSpatioTextualMatrix


class RepresentationError(ValueError):
    pass


@dataclass(frozen=True)
class SpatioTextualTensor:
    """H x W x d tensor: zero rows off-segment, one shared vector per segment."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise RepresentationError("expected an H x W x d tensor")
        object.__setattr__(self, "data", data)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.data.shape[:2]

    @property
    def d_embed(self) -> int:
        return self.data.shape[2]

    def support(self) -> np.ndarray:
        """Boolean grid of pixels carrying a nonzero vector."""
        return np.any(self.data != 0.0, axis=2)

    @staticmethod
    def zeros(resolution: tuple[int, int], d_embed: int) -> "SpatioTextualTensor":
        h, w = resolution
        return SpatioTextualTensor(np.zeros((h, w, d_embed)))


def _check_disjoint(masks) -> None:
    cover = None
    for mask in masks:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise RepresentationError("empty segment mask")
        cover = mask.astype(np.int32) if cover is None else cover + mask
    if cover is not None and (cover > 1).any():
        raise RepresentationError("segment masks overlap")


def build_st_train(
    image: np.ndarray,
    segments,
    embedder,
    min_area_fraction: float = 0.0,
) -> SpatioTextualTensor:
    """Training-path tensor: each segment carries the embedding of its own
    cropped, blacked-out, resized pixels."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    masks = [np.asarray(m, dtype=bool) for m in segments]
    _check_disjoint(masks)
    data = np.zeros((h, w, embedder.d_embed))
    for mask in masks:
        if mask.sum() < min_area_fraction * h * w:
            raise RepresentationError(
                f"segment area {int(mask.sum())} below {min_area_fraction:.0%} of canvas"
            )
        patch = preprocess_segment(image, mask, embedder.input_size)
        data[mask] = embedder.embed_image(patch)
    return SpatioTextualTensor(data)


def select_training_segments(all_segments, rng: np.random.Generator, *,
                             canvas_area: int | None = None,
                             min_area_fraction: float = 0.05,
                             max_count: int = 3):
    """Randomly pick 1..max_count segments that pass the area filter.

    Segments smaller than ``min_area_fraction`` of the canvas are never
    selected (their crops embed poorly at low resolution). Returns the chosen
    indices into ``all_segments``; empty when nothing is eligible.
    """
    masks = [np.asarray(m, dtype=bool) for m in all_segments]
    if canvas_area is None:
        canvas_area = masks[0].size if masks else 0
    eligible = [i for i, m in enumerate(masks) if m.sum() >= min_area_fraction * canvas_area]
    if not eligible:
        return []
    k = int(rng.integers(1, min(max_count, len(eligible)) + 1))
    picked = rng.choice(len(eligible), size=k, replace=False)
    return [eligible[i] for i in picked]


def build_st_infer(
    rst: RawSpatioTextualMatrix,
    embedder,
    prior=None,
) -> SpatioTextualTensor:
    """Inference-path tensor from local prompts.

    Each segment's vector is ``embed_text(prompt)``, mapped into image space
    by ``prior`` when one is supplied. Omitting the prior reproduces the
    direct text-embedding ablation.
    """
    h, w = rst.shape
    data = np.zeros((h, w, embedder.d_embed))
    for k, prompt in enumerate(rst.prompts, start=1):
        mask = rst.segment_mask(k)
        if not mask.any():
            continue
        v = embedder.embed_text(prompt)
        if prior is not None:
            v = prior.transform(v)
        data[mask] = v
    return SpatioTextualTensor(data)


def build_binary(rst: RawSpatioTextualMatrix) -> np.ndarray:
    """Ablation representation: H x W x 1, one where any segment is assigned."""
    return (rst.labels > 0).astype(np.float64)[..., None]


def resample_st(st: SpatioTextualTensor, target: tuple[int, int]) -> SpatioTextualTensor:
    """Nearest-neighbor downsampling to the latent resolution.

    Nearest-neighbor keeps every output row either zero or an existing
    segment vector; interpolating would blend embeddings across segment
    boundaries, which the representation never defines.
    """
    h, w = st.resolution
    th, tw = target
    if th < 1 or tw < 1 or h % th or w % tw:
        raise RepresentationError(f"target {target} does not evenly divide {(h, w)}")
    fy, fx = h // th, w // tw
    return SpatioTextualTensor(st.data[::fy, ::fx].copy())
