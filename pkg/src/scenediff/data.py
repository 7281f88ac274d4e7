"""Synthetic shapes corpus and sparse evaluation inputs.

Corpus layout on disk::

    <root>/manifest.json
    <root>/samples/000000/image.png     RGB, canvas size
    <root>/samples/000000/labels.png    grayscale; 0 background, k = segment k
    <root>/samples/000000/labels.txt    one segment name per line (line k -> label k)
    <root>/samples/000000/caption.txt   templated scene caption

The same reader also ingests any dense segmentation data written in this
layout, which is what the sparse-input converter consumes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from .embed import DEFAULT_COLORS
from .scene import RawSpatioTextualMatrix, decode_rle, encode_rle
from .shapes import SHAPE_TERMS, shape_mask


class DataError(ValueError):
    pass


_COLOR_RGB = dict(DEFAULT_COLORS)


@dataclass(frozen=True)
class GenConfig:
    canvas: int = 32
    min_shapes: int = 1
    max_shapes: int = 3
    min_area_fraction: float = 0.05
    # size ranges as fractions of the canvas; lower bounds sit above the
    # area floor so rejection is rare
    size_ranges: dict = field(
        default_factory=lambda: {
            "circle": (0.14, 0.22),
            "square": (0.12, 0.20),
            "triangle": (0.17, 0.24),
        }
    )
    colors: tuple = tuple(sorted(set(_COLOR_RGB) - {"gray"}))
    background_terms: tuple = ("gray", "white", "black")
    gap: int = 1
    max_attempts: int = 200

    def validate(self) -> None:
        if self.canvas < 8:
            raise DataError(f"canvas too small: {self.canvas}")
        if not 1 <= self.min_shapes <= self.max_shapes:
            raise DataError("need 1 <= min_shapes <= max_shapes")
        if self.max_shapes > len(self.colors):
            raise DataError("not enough distinct colors for max_shapes")
        for term in self.background_terms:
            if term not in _COLOR_RGB:
                raise DataError(f"unknown background term {term!r}")
        for term, (lo, hi) in self.size_ranges.items():
            if term not in SHAPE_TERMS or not 0 < lo <= hi:
                raise DataError(f"bad size range for {term!r}")


@dataclass(frozen=True)
class ShapesSample:
    image: np.ndarray  # H x W x 3 float32 in [0, 1]
    segments: tuple  # of (mask, color term, shape term)
    background: str
    caption: str

    def labels(self) -> np.ndarray:
        grid = np.zeros(self.image.shape[:2], dtype=np.int32)
        for k, (mask, _, _) in enumerate(self.segments, start=1):
            grid[mask] = k
        return grid

    def label_names(self) -> tuple:
        return tuple(f"{color} {shape}" for _, color, shape in self.segments)


def _caption(segments, background: str) -> str:
    clauses = [f"a {color} {shape}" for _, color, shape in segments]
    return " and ".join(clauses) + f" on a {background} background"


def _place_segments(rng, config: GenConfig, chosen_colors):
    c = config.canvas
    occupied = np.zeros((c, c), dtype=bool)
    min_area = config.min_area_fraction * c * c
    segments = []
    for color in chosen_colors:
        shape = str(rng.choice(SHAPE_TERMS))
        lo, hi = config.size_ranges[shape]
        placed = False
        for _ in range(config.max_attempts):
            size = rng.uniform(lo, hi) * c
            margin = size + 1.0
            if margin >= c - 1 - margin:
                continue
            cy = rng.uniform(margin, c - 1 - margin)
            cx = rng.uniform(margin, c - 1 - margin)
            mask = shape_mask(shape, c, c, cy, cx, size)
            if mask.sum() < min_area:
                continue
            blocked = ndimage.binary_dilation(
                occupied, structure=np.ones((3, 3), bool), iterations=config.gap
            )
            if (mask & blocked).any():
                continue
            occupied |= mask
            segments.append((mask, color, shape))
            placed = True
            break
        if not placed:
            return None
    return segments


def gen_shapes(rng: np.random.Generator, config: GenConfig = GenConfig()) -> ShapesSample:
    """Place 1..max_shapes non-overlapping colored shapes by rejection sampling."""
    config.validate()
    c = config.canvas
    n = int(rng.integers(config.min_shapes, config.max_shapes + 1))
    background = str(rng.choice(config.background_terms))
    color_pool = [t for t in config.colors if t != background]
    chosen_colors = [str(t) for t in rng.choice(color_pool, size=n, replace=False)]

    # unlucky early placements can wedge a layout; retry the whole canvas
    segments = None
    for _ in range(20):
        segments = _place_segments(rng, config, chosen_colors)
        if segments is not None:
            break
    if segments is None:
        raise DataError(
            f"could not place {n} shapes after 20 layout retries; config too crowded"
        )

    image = np.empty((c, c, 3), dtype=np.float32)
    image[:] = _COLOR_RGB[background]
    for mask, color, _ in segments:
        image[mask] = _COLOR_RGB[color]
    return ShapesSample(
        image=image,
        segments=tuple(segments),
        background=background,
        caption=_caption(segments, background),
    )


# ---------------------------------------------------------------------------
# corpus persistence


@dataclass(frozen=True)
class CorpusSample:
    id: str
    split: str
    image: np.ndarray  # H x W x 3 float32 in [0, 1]
    labels: np.ndarray  # H x W int32
    label_names: tuple
    caption: str

    def segment_masks(self) -> list:
        return [self.labels == k for k in range(1, len(self.label_names) + 1)]


def _write_png(path: str, array: np.ndarray) -> None:
    Image.fromarray(array).save(path, format="PNG")


def save_corpus(
    out_dir: str,
    n: int,
    config: GenConfig = GenConfig(),
    seed: int = 0,
    val_fraction: float = 0.1,
) -> dict:
    """Generate and persist a corpus; returns the manifest."""
    if n < 1:
        raise DataError(f"corpus size must be >= 1, got {n}")
    if not 0.0 <= val_fraction < 1.0:
        raise DataError(f"val_fraction {val_fraction} outside [0, 1)")
    rng = np.random.default_rng(seed)
    samples_dir = os.path.join(out_dir, "samples")
    os.makedirs(samples_dir, exist_ok=True)
    entries = []
    for i in range(n):
        sample = gen_shapes(rng, config)
        sid = f"{i:06d}"
        split = "val" if rng.random() < val_fraction else "train"
        d = os.path.join(samples_dir, sid)
        os.makedirs(d, exist_ok=True)
        _write_png(os.path.join(d, "image.png"), np.round(sample.image * 255).astype(np.uint8))
        _write_png(os.path.join(d, "labels.png"), sample.labels().astype(np.uint8))
        with open(os.path.join(d, "labels.txt"), "w", encoding="utf-8") as f:
            f.write("\n".join(sample.label_names()) + "\n")
        with open(os.path.join(d, "caption.txt"), "w", encoding="utf-8") as f:
            f.write(sample.caption + "\n")
        entries.append({"id": sid, "split": split})
    manifest = {
        "canvas": [config.canvas, config.canvas],
        "seed": seed,
        "n": n,
        "samples": entries,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1)
    return manifest


def load_sample(root: str, sid: str, split: str = "") -> CorpusSample:
    d = os.path.join(root, "samples", sid)
    try:
        image = np.asarray(Image.open(os.path.join(d, "image.png")).convert("RGB"))
        labels = np.asarray(Image.open(os.path.join(d, "labels.png")))
        with open(os.path.join(d, "labels.txt"), encoding="utf-8") as f:
            names = tuple(line.strip() for line in f if line.strip())
        with open(os.path.join(d, "caption.txt"), encoding="utf-8") as f:
            caption = f.read().strip()
    except FileNotFoundError as e:
        raise DataError(f"incomplete sample directory {d}: {e}") from None
    return CorpusSample(
        id=sid,
        split=split,
        image=image.astype(np.float32) / 255.0,
        labels=labels.astype(np.int32),
        label_names=names,
        caption=caption,
    )


def load_corpus(root: str, split: Optional[str] = None, limit: Optional[int] = None) -> list:
    """Read samples listed in the manifest, optionally filtered by split."""
    manifest_path = os.path.join(root, "manifest.json")
    if not os.path.exists(manifest_path):
        raise DataError(f"no manifest at {manifest_path}")
    with open(manifest_path, encoding="utf-8") as f:
        manifest = json.load(f)
    out = []
    for entry in manifest["samples"]:
        if split is not None and entry["split"] != split:
            continue
        out.append(load_sample(root, entry["id"], entry["split"]))
        if limit is not None and len(out) >= limit:
            break
    return out


# ---------------------------------------------------------------------------
# sparse evaluation inputs


@dataclass(frozen=True)
class SparseEvalInput:
    global_prompt: str
    rst: RawSpatioTextualMatrix
    provenance: str = ""

    def __post_init__(self):
        k = len(self.rst.prompts)
        if not 1 <= k <= 3:
            raise DataError(f"sparse input must carry 1..3 segments, got {k}")
        for p in self.rst.prompts:
            if not p.startswith("a "):
                raise DataError(f"prompt {p!r} does not follow the 'a {{label}}' template")


def make_sparse_inputs(
    dense_labels: np.ndarray,
    label_names,
    caption: str,
    rng: np.random.Generator,
    min_area_fraction: float = 0.05,
    max_count: int = 3,
    provenance: str = "",
) -> Optional[SparseEvalInput]:
    """Subsample a dense label map into a sparse conditioning input.

    Filters segments below the area floor, keeps a random subset of
    1..max_count, renumbers labels densely, and templates each prompt as
    "a {label}". Returns None when no segment survives the filter.
    """
    labels = np.asarray(dense_labels)
    if labels.ndim != 2:
        raise DataError("dense label map must be 2-D")
    names = list(label_names)
    top = int(labels.max(initial=0))
    if top > len(names):
        raise DataError(f"label {top} has no name")

    area_floor = min_area_fraction * labels.size
    eligible = [k for k in range(1, top + 1) if (labels == k).sum() >= area_floor]
    if not eligible:
        return None
    k = int(rng.integers(1, min(max_count, len(eligible)) + 1))
    picked = [eligible[i] for i in rng.choice(len(eligible), size=k, replace=False)]

    sparse = np.zeros_like(labels, dtype=np.int32)
    prompts = []
    for new_label, old_label in enumerate(picked, start=1):
        sparse[labels == old_label] = new_label
        prompts.append(f"a {names[old_label - 1]}")
    rst = RawSpatioTextualMatrix(labels=sparse, prompts=tuple(prompts))
    return SparseEvalInput(global_prompt=caption, rst=rst, provenance=provenance)


def write_inputs_jsonl(inputs, path: str) -> None:
    """Persist sparse inputs, one JSON document per line, masks run-length coded."""
    with open(path, "w", encoding="utf-8") as f:
        for inp in inputs:
            h, w = inp.rst.shape
            doc = {
                "provenance": inp.provenance,
                "global_prompt": inp.global_prompt,
                "canvas": [h, w],
                "segments": [
                    {"prompt": p, "mask_rle": encode_rle(inp.rst.segment_mask(k))}
                    for k, p in enumerate(inp.rst.prompts, start=1)
                ],
            }
            f.write(json.dumps(doc) + "\n")


def read_inputs_jsonl(path: str) -> list:
    out = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                h, w = doc["canvas"]
                labels = np.zeros((h, w), dtype=np.int32)
                prompts = []
                for k, seg in enumerate(doc["segments"], start=1):
                    mask = decode_rle(seg["mask_rle"], (h, w))
                    if (labels[mask] != 0).any():
                        raise DataError("segment masks overlap")
                    labels[mask] = k
                    prompts.append(seg["prompt"])
                rst = RawSpatioTextualMatrix(labels=labels, prompts=tuple(prompts))
                out.append(
                    SparseEvalInput(
                        global_prompt=doc["global_prompt"],
                        rst=rst,
                        provenance=doc.get("provenance", ""),
                    )
                )
            except (KeyError, TypeError, json.JSONDecodeError) as e:
                raise DataError(f"{path}:{line_no}: malformed input document: {e}") from None
    if not out:
        raise DataError(f"{path}: no inputs")
    return out
