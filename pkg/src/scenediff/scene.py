"""Sparse scene inputs: a global prompt plus disjoint masks with local prompts.

The on-disk scene format is a UTF-8 JSON document:

    {
      "global_prompt": str,
      "canvas": [H, W],
      "segments": [
        {"prompt": str, "mask_rle": str}    # or {"prompt": str, "polygon": [[x, y], ...]}
      ]
    }

``mask_rle`` is a row-major run-length encoding: comma-separated base-10 run
lengths alternating between 0-runs and 1-runs, always starting with a 0-run
(which may be empty, i.e. "0,..."). Polygons are lists of [x, y] vertices in
pixel coordinates, rasterized with the even-odd fill rule against pixel centers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class SceneValidationError(ValueError):
    """Raised when a scene document or scene value violates its invariants."""


@dataclass(frozen=True)
class SegmentSpec:
    """One user segment: a free-form prompt attached to a boolean mask."""

    prompt: str
    mask: np.ndarray  # bool, H x W

    def __post_init__(self):
        if not self.prompt.strip():
            raise SceneValidationError("segment prompt is empty")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise SceneValidationError("segment mask must be a 2-D grid")
        if not mask.any():
            raise SceneValidationError("segment mask has no pixels")
        object.__setattr__(self, "mask", mask)

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class SceneSpec:
    """A validated sparse scene: global prompt, canvas size, disjoint segments."""

    global_prompt: str
    canvas: tuple[int, int]  # (H, W)
    segments: tuple[SegmentSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        h, w = self.canvas
        if h < 1 or w < 1:
            raise SceneValidationError(f"invalid canvas size {self.canvas}")
        object.__setattr__(self, "canvas", (int(h), int(w)))
        object.__setattr__(self, "segments", tuple(self.segments))
        cover = np.zeros((h, w), dtype=np.int32)
        for seg in self.segments:
            if seg.mask.shape != (h, w):
                raise SceneValidationError(
                    f"segment mask shape {seg.mask.shape} does not match canvas {(h, w)}"
                )
            cover += seg.mask
        if (cover > 1).any():
            raise SceneValidationError("masks not disjoint")


@dataclass(frozen=True)
class RawSpatioTextualMatrix:
    """Label grid plus one prompt per positive label; 0 marks unassigned pixels."""

    labels: np.ndarray  # int, H x W
    prompts: tuple[str, ...]

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int32)
        if labels.ndim != 2:
            raise SceneValidationError("label grid must be 2-D")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "prompts", tuple(self.prompts))
        top = int(labels.max(initial=0))
        if labels.min(initial=0) < 0:
            raise SceneValidationError("negative labels are not allowed")
        if top > len(self.prompts):
            raise SceneValidationError(f"label {top} has no prompt")

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def segment_mask(self, k: int) -> np.ndarray:
        """Boolean mask of segment k (1-based)."""
        return self.labels == k


# ---------------------------------------------------------------------------
# run-length encoding


def encode_rle(mask: np.ndarray) -> str:
    flat = np.asarray(mask, dtype=bool).ravel()
    runs: list[int] = []
    current = False  # encoding starts with a 0-run
    run = 0
    for v in flat:
        if v == current:
            run += 1
        else:
            runs.append(run)
            current = not current
            run = 1
    runs.append(run)
    return ",".join(str(r) for r in runs)


def decode_rle(rle: str, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    try:
        runs = [int(tok) for tok in rle.split(",")]
    except ValueError as exc:
        raise SceneValidationError(f"malformed RLE: {exc}") from None
    if any(r < 0 for r in runs):
        raise SceneValidationError("malformed RLE: negative run length")
    if sum(runs) != h * w:
        raise SceneValidationError(
            f"RLE length {sum(runs)} does not cover canvas of {h * w} pixels"
        )
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for r in runs:
        if value:
            flat[pos : pos + r] = True
        pos += r
        value = not value
    return flat.reshape(h, w)


# ---------------------------------------------------------------------------
# polygon rasterization


def rasterize_polygon(vertices, shape: tuple[int, int]) -> np.ndarray:
    """Even-odd fill of a closed polygon against pixel centers.

    A pixel (i, j) is inside iff a ray cast from its center (j+0.5, i+0.5)
    crosses the polygon boundary an odd number of times.
    """
    pts = np.asarray(vertices, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise SceneValidationError("polygon needs at least 3 [x, y] vertices")
    h, w = shape
    ys = np.arange(h, dtype=np.float64) + 0.5
    xs = np.arange(w, dtype=np.float64) + 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    crossings = np.zeros((h, w), dtype=np.int32)
    n = pts.shape[0]
    for a in range(n):
        x1, y1 = pts[a]
        x2, y2 = pts[(a + 1) % n]
        if y1 == y2:
            continue
        straddles = (y1 <= yy) != (y2 <= yy)
        x_at = x1 + (yy - y1) * (x2 - x1) / (y2 - y1)
        crossings += (straddles & (xx < x_at)).astype(np.int32)
    return (crossings % 2) == 1


# ---------------------------------------------------------------------------
# parsing / serialization


def parse_scene(document: bytes) -> SceneSpec:
    """Parse and validate a scene document (see module docstring for the format)."""
    try:
        doc = json.loads(document.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SceneValidationError(f"malformed scene document: {exc}") from None
    if not isinstance(doc, dict):
        raise SceneValidationError("scene document must be a JSON object")
    try:
        global_prompt = doc["global_prompt"]
        canvas = doc["canvas"]
    except KeyError as exc:
        raise SceneValidationError(f"scene document missing key {exc}") from None
    if not isinstance(global_prompt, str):
        raise SceneValidationError("global_prompt must be a string")
    if not (isinstance(canvas, list) and len(canvas) == 2):
        raise SceneValidationError("canvas must be [H, W]")
    h, w = int(canvas[0]), int(canvas[1])
    segments = []
    for idx, entry in enumerate(doc.get("segments", [])):
        if not isinstance(entry, dict) or "prompt" not in entry:
            raise SceneValidationError(f"segment {idx} missing prompt")
        if "mask_rle" in entry:
            mask = decode_rle(entry["mask_rle"], (h, w))
        elif "polygon" in entry:
            mask = rasterize_polygon(entry["polygon"], (h, w))
        else:
            raise SceneValidationError(f"segment {idx} needs mask_rle or polygon")
        segments.append(SegmentSpec(prompt=entry["prompt"], mask=mask))
    return SceneSpec(global_prompt=global_prompt, canvas=(h, w), segments=tuple(segments))


def serialize_scene(scene: SceneSpec) -> bytes:
    """Serialize with raster (RLE) masks; parse_scene(serialize_scene(s)) round-trips."""
    doc = {
        "global_prompt": scene.global_prompt,
        "canvas": [scene.canvas[0], scene.canvas[1]],
        "segments": [
            {"prompt": seg.prompt, "mask_rle": encode_rle(seg.mask)} for seg in scene.segments
        ],
    }
    return json.dumps(doc).encode("utf-8")


# ---------------------------------------------------------------------------
# derived views


def to_rst(scene: SceneSpec) -> RawSpatioTextualMatrix:
    """Collapse a scene into a label grid (0 = unassigned, k = segment k)."""
    h, w = scene.canvas
    labels = np.zeros((h, w), dtype=np.int32)
    for k, seg in enumerate(scene.segments, start=1):
        labels[seg.mask] = k
    return RawSpatioTextualMatrix(labels=labels, prompts=tuple(s.prompt for s in scene.segments))


def concat_prompts(global_prompt: str, local_prompts) -> str:
    """Append each local prompt to the global prompt, comma-separated.

    Feeding the combined string as the text condition narrows the gap between
    training captions (which describe everything in the frame) and terse
    user-supplied global prompts.
    """
    return ", ".join([global_prompt] + list(local_prompts))
