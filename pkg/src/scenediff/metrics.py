"""Automatic evaluation: embedding distances, segmentation IOU, and the
Fréchet distance between feature populations, plus the batch evaluator that
runs them over a trained checkpoint.

Distances compare image embeddings against text embeddings in the shared
space, so the text side uses the embedder's corrected (canonical) text
embedding when one exists; embedders without a correction are used as-is.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from scipy import linalg, ndimage

from .data import SparseEvalInput
from .embed import DEFAULT_COLORS, bilinear_resize, preprocess_segment
from .guidance import ConditionSet, GuidanceSpec
from .representation import build_binary, build_st_infer
from .scene import RawSpatioTextualMatrix, concat_prompts
from .diffusion.checkpoint import DiffusionCheckpoint
from .diffusion.sampling import ddim_sample_batch


class MetricError(ValueError):
    pass


def _metric_text_embedding(embedder, prompt: str) -> np.ndarray:
    corrected = getattr(embedder, "canonical_text_embedding", None)
    return corrected(prompt) if corrected is not None else embedder.embed_text(prompt)


def _cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise MetricError("cannot take cosine distance with a zero vector")
    return float(1.0 - float(a @ b) / (na * nb))


def global_distance(image: np.ndarray, global_prompt: str, embedder) -> float:
    """1 - cos between the prompt embedding and the whole frame's embedding.

    The frame is resized to the embedder input size; no cropping.
    """
    s = embedder.input_size
    patch = bilinear_resize(np.asarray(image, dtype=np.float64), s, s)
    return _cosine_distance(embedder.embed_image(patch), _metric_text_embedding(embedder, global_prompt))


def local_distance(image: np.ndarray, rst: RawSpatioTextualMatrix, embedder) -> float:
    """Mean over segments of 1 - cos(crop embedding, local prompt embedding)."""
    if not rst.prompts:
        raise MetricError("rst has no segments")
    image = np.asarray(image, dtype=np.float64)
    dists = []
    for k, prompt in enumerate(rst.prompts, start=1):
        mask = rst.segment_mask(k)
        if not mask.any():
            raise MetricError(f"segment {k} has no pixels")
        v = embedder.embed_image(preprocess_segment(image, mask, embedder.input_size))
        dists.append(_cosine_distance(v, _metric_text_embedding(embedder, prompt)))
    return float(np.mean(dists))


def iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise MetricError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


class ColorRegionSegmenter:
    """Predicts a prompt's region by nearest-palette color classification.

    Stands in for a learned segmenter at toy scale: classify every pixel to
    its nearest palette color, keep connected components of the prompt's
    color term, and drop specks below ``min_region`` pixels.  Swappable for
    anything exposing ``predict(image, prompt) -> bool mask``.
    """

    def __init__(self, palette=DEFAULT_COLORS, min_region: int = 4):
        self.terms = tuple(name for name, _ in palette)
        self.colors = np.array([rgb for _, rgb in palette], dtype=np.float64)
        self.min_region = min_region

    def color_term_for(self, prompt: str) -> str:
        for token in re.findall(r"[a-z]+", prompt.lower()):
            if token in self.terms:
                return token
        raise MetricError(f"no palette color term in prompt {prompt!r}")

    def predict(self, image: np.ndarray, prompt: str) -> np.ndarray:
        term = self.color_term_for(prompt)
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[2] != 3:
            raise MetricError(f"expected an H x W x 3 image, got {image.shape}")
        dist = ((image[:, :, None, :] - self.colors[None, None, :, :]) ** 2).sum(axis=-1)
        raw = dist.argmin(axis=-1) == self.terms.index(term)
        labeled, count = ndimage.label(raw, structure=np.ones((3, 3), bool))
        keep = np.zeros_like(raw)
        for region in range(1, count + 1):
            member = labeled == region
            if member.sum() >= self.min_region:
                keep |= member
        return keep


def local_iou(image: np.ndarray, rst: RawSpatioTextualMatrix, segmenter) -> float:
    """Mean IOU between each requested mask and the segmenter's prediction."""
    if not rst.prompts:
        raise MetricError("rst has no segments")
    scores = []
    for k, prompt in enumerate(rst.prompts, start=1):
        mask = rst.segment_mask(k)
        if not mask.any():
            raise MetricError(f"segment {k} has no pixels")
        scores.append(iou(segmenter.predict(image, prompt), mask))
    return float(np.mean(scores))


def frechet_distance(features_a, features_b, eps: float = 1e-6) -> float:
    """2-Wasserstein distance between Gaussian fits of two feature sets.

    ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}); covariances get
    eps on the diagonal before the square root, and a complex residue above
    1e-3 is an error rather than silently discarded.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise MetricError(f"need n x d feature arrays with matching d, got {a.shape} and {b.shape}")
    d = a.shape[1]
    if a.shape[0] < d + 1 or b.shape[0] < d + 1:
        raise MetricError(f"need at least d+1={d + 1} samples per set, got {a.shape[0]} and {b.shape[0]}")

    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False) + eps * np.eye(d)
    cov_b = np.cov(b, rowvar=False) + eps * np.eye(d)
    root = linalg.sqrtm(cov_a @ cov_b)
    if np.iscomplexobj(root):
        residue = np.abs(root.imag).max()
        if residue > 1e-3:
            raise MetricError(f"matrix square root has complex residue {residue:.2e}")
        root = root.real
    value = float(((mu_a - mu_b) ** 2).sum() + np.trace(cov_a + cov_b - 2.0 * root))
    if -1e-8 < value < 0.0:  # rounding on identical sets
        value = 0.0
    return value


# ---------------------------------------------------------------------------
# batch evaluation


@dataclass(frozen=True)
class EvalConfig:
    guidance: GuidanceSpec = GuidanceSpec()
    steps: Optional[int] = None
    seed: int = 0
    batch_size: int = 32
    # conditioning trick: local prompts appended to the global prompt
    concat_local_prompts: bool = True
    use_prior: bool = True


@dataclass
class EvalReport:
    n: int
    records: list
    aggregates: dict
    frechet: Optional[float]
    failures: int
    config_fingerprint: str
    config: dict = field(default_factory=dict)

    def validate(self) -> None:
        ok = [r for r in self.records if "error" not in r]
        if len(ok) + self.failures != self.n:
            raise MetricError("record count does not add up")
        for key, value in self.aggregates.items():
            mean = float(np.mean([r[key] for r in ok]))
            if abs(mean - value) > 1e-9:
                raise MetricError(f"aggregate {key} does not match its records")
        for r in ok:
            if not (0.0 <= r["global_distance"] <= 2.0 and 0.0 <= r["local_distance"] <= 2.0):
                raise MetricError("distance outside [0, 2]")
            if not 0.0 <= r["local_iou"] <= 1.0:
                raise MetricError("IOU outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps(
            {
                "config_fingerprint": self.config_fingerprint,
                "config": self.config,
                "n": self.n,
                "failures": self.failures,
                "frechet": self.frechet,
                "aggregates": self.aggregates,
                "records": self.records,
            },
            indent=1,
        )

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_json() + "\n")

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        doc = json.loads(text)
        report = cls(
            n=doc["n"],
            records=doc["records"],
            aggregates=doc["aggregates"],
            frechet=doc["frechet"],
            failures=doc["failures"],
            config_fingerprint=doc["config_fingerprint"],
            config=doc.get("config", {}),
        )
        report.validate()
        return report


def _frame_features(images: Sequence[np.ndarray], embedder) -> np.ndarray:
    s = embedder.input_size
    return np.stack(
        [embedder.embed_image(bilinear_resize(np.asarray(im, np.float64), s, s)) for im in images]
    )


def evaluate(
    checkpoint: DiffusionCheckpoint,
    inputs: Sequence[SparseEvalInput],
    config: EvalConfig = EvalConfig(),
    reference_images: Optional[Sequence[np.ndarray]] = None,
) -> EvalReport:
    """Generate one image per input and score all metrics.

    Per-input noise is seeded by (config.seed + input index), so results do
    not depend on batch composition.  Per-input failures are recorded, not
    fatal.  The Fréchet term needs reference images and enough samples on
    both sides; otherwise it is reported as null.
    """
    if len(inputs) == 0:
        raise MetricError("no evaluation inputs")
    embedder = checkpoint.embedder
    segmenter = ColorRegionSegmenter(palette=embedder.config.colors)

    conds: list = []
    records: list = [None] * len(inputs)
    for i, inp in enumerate(inputs):
        try:
            gp = (
                concat_prompts(inp.global_prompt, inp.rst.prompts)
                if config.concat_local_prompts
                else inp.global_prompt
            )
            text = embedder.embed_text(gp)
            if checkpoint.representation == "binary":
                st = build_binary(inp.rst)
            else:
                st = build_st_infer(
                    inp.rst, embedder, prior=checkpoint.prior if config.use_prior else None
                )
            conds.append((i, ConditionSet(global_text=text, st=st)))
        except Exception as e:  # noqa: BLE001 - per-sample isolation is the contract
            records[i] = {"id": inp.provenance or str(i), "error": str(e)}

    c = checkpoint.denoiser.space_channels
    h, w = checkpoint.latent_resolution
    generated: dict = {}
    for start in range(0, len(conds), config.batch_size):
        chunk = conds[start : start + config.batch_size]
        noise = torch.stack(
            [
                torch.randn(c, h, w, generator=torch.Generator().manual_seed(config.seed + i))
                for i, _ in chunk
            ]
        )
        images = ddim_sample_batch(
            checkpoint,
            [cs for _, cs in chunk],
            guidance=config.guidance,
            steps=config.steps,
            noise=noise,
        )
        for (i, _), img in zip(chunk, images):
            generated[i] = img

    for i, inp in enumerate(inputs):
        if records[i] is not None:
            continue
        try:
            img = generated[i]
            records[i] = {
                "id": inp.provenance or str(i),
                "global_distance": global_distance(img, inp.global_prompt, embedder),
                "local_distance": local_distance(img, inp.rst, embedder),
                "local_iou": local_iou(img, inp.rst, segmenter),
            }
        except Exception as e:  # noqa: BLE001
            records[i] = {"id": inp.provenance or str(i), "error": str(e)}

    ok = [r for r in records if "error" not in r]
    aggregates = {
        key: float(np.mean([r[key] for r in ok])) if ok else float("nan")
        for key in ("global_distance", "local_distance", "local_iou")
    }

    frechet = None
    if reference_images is not None and ok:
        gen_feats = _frame_features([generated[i] for i in sorted(generated)], embedder)
        ref_feats = _frame_features(reference_images, embedder)
        d = gen_feats.shape[1]
        if len(gen_feats) >= d + 1 and len(ref_feats) >= d + 1:
            frechet = frechet_distance(gen_feats, ref_feats)

    config_doc = {
        "guidance": config.guidance.to_dict(),
        "steps": config.steps if config.steps is not None else checkpoint.default_sample_steps(),
        "seed": config.seed,
        "concat_local_prompts": config.concat_local_prompts,
        "use_prior": config.use_prior,
        "checkpoint_fingerprint": checkpoint.config_fingerprint,
    }
    fingerprint = hashlib.sha256(json.dumps(config_doc, sort_keys=True).encode()).hexdigest()[:16]

    report = EvalReport(
        n=len(inputs),
        records=records,
        aggregates=aggregates,
        frechet=frechet,
        failures=len(records) - len(ok),
        config_fingerprint=fingerprint,
        config=config_doc,
    )
    report.validate()
    return report
