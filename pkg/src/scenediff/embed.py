"""Joint text/image embedding boundary.

The toy embedder maps a controlled vocabulary of colored shapes into one
shared d-dimensional space. Image and text embeddings land near each other
by construction, except that text embeddings are rotated by a configurable
orthogonal "misalignment" matrix. That rotation simulates the text/image
domain gap a real joint embedder exhibits, and is what makes the translation
model in :mod:`scenediff.prior` learn something non-trivial.

A real embedder can be dropped in: anything exposing ``d_embed``,
``input_size``, ``embed_image(patch)``, ``embed_text(prompt)`` and
``null_text_vector`` satisfies the consumers in this package.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import shapes

DEFAULT_COLORS: tuple[tuple[str, tuple[float, float, float]], ...] = (
    ("red", (1.0, 0.0, 0.0)),
    ("green", (0.0, 1.0, 0.0)),
    ("blue", (0.0, 0.0, 1.0)),
    ("yellow", (1.0, 1.0, 0.0)),
    ("white", (1.0, 1.0, 1.0)),
    # not exactly 0 so palette-black content stays distinguishable from
    # blacked-out (off-segment) pixels
    ("black", (0.1, 0.1, 0.1)),
    ("gray", (0.5, 0.5, 0.5)),
)

# pixels at or below this are treated as blacked-out, not content
SUPPORT_CUTOFF = 0.02

_RESIDUAL_SCALE = 0.25


class EmbeddingError(ValueError):
    """Raised on out-of-vocabulary prompts or unembeddable inputs."""


@dataclass(frozen=True)
class PromptFeatures:
    """Vocabulary features recognized in a prompt."""

    clauses: tuple[tuple[str, str], ...]  # (color term, shape term)
    backgrounds: tuple[str, ...]  # color terms

    def __bool__(self) -> bool:
        return bool(self.clauses or self.backgrounds)


@dataclass(frozen=True)
class ToyEmbedderConfig:
    d_embed: int = 16
    input_size: int = 16
    misalignment_seed: int | None = None  # None = identity (no text/image gap)
    colors: tuple[tuple[str, tuple[float, float, float]], ...] = DEFAULT_COLORS
    shape_terms: tuple[str, ...] = shapes.SHAPE_TERMS

    def __post_init__(self):
        if not self.colors or not self.shape_terms:
            raise ValueError("vocabulary must be non-empty")
        needed = len(self.colors) + len(self.shape_terms) + 4
        if self.d_embed < needed:
            raise ValueError(f"d_embed={self.d_embed} too small; need >= {needed}")


def random_orthogonal(d: int, seed: int) -> np.ndarray:
    """Deterministic random orthogonal matrix (QR with sign fix)."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((d, d))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


def unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise EmbeddingError("cannot normalize a zero vector")
    return v / n


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain bilinear resampling (align_corners=False convention)."""
    img = np.asarray(img, dtype=np.float64)
    in_h, in_w = img.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    if img.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


# ---------------------------------------------------------------------------
# segment preprocessing


def crop_square(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Tight square crop around the mask with off-mask pixels set to 0.

    The bounding box is padded symmetrically along its short axis to a square.
    If the padded window sticks out of the image it is shifted back inside;
    if the image itself is shorter than the window along some axis, the
    missing rows/columns stay black.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.shape[:2]:
        raise EmbeddingError(f"mask shape {mask.shape} does not match image {image.shape[:2]}")
    if not mask.any():
        raise EmbeddingError("empty mask")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    r0, r1 = int(rows[0]), int(rows[-1])
    c0, c1 = int(cols[0]), int(cols[-1])
    side = max(r1 - r0 + 1, c1 - c0 + 1)
    h, w = mask.shape

    def window_start(lo: int, hi: int, extent: int) -> int:
        start = lo - (side - (hi - lo + 1)) // 2
        if extent >= side:
            start = min(max(start, 0), extent - side)
        else:
            start = (extent - side) // 2
        return start

    rs = window_start(r0, r1, h)
    cs = window_start(c0, c1, w)
    canvas = np.zeros((side, side, image.shape[2]), dtype=np.float64)
    ir0, ir1 = max(rs, 0), min(rs + side, h)
    ic0, ic1 = max(cs, 0), min(cs + side, w)
    sub = image[ir0:ir1, ic0:ic1] * mask[ir0:ir1, ic0:ic1, None]
    canvas[ir0 - rs : ir1 - rs, ic0 - cs : ic1 - cs] = sub
    return canvas


def preprocess_segment(image: np.ndarray, mask: np.ndarray, input_size: int) -> np.ndarray:
    """Crop a tight square around the mask, black out the rest, resize."""
    square = crop_square(image, mask)
    return bilinear_resize(square, input_size, input_size)


# ---------------------------------------------------------------------------
# the toy embedder


class ToyJointEmbedder:
    """Deterministic stand-in for a contrastively trained joint embedder.

    Basis layout (orthonormal unit vectors):
      one direction per color term, one per shape term, one "null content"
      direction (all-black patches), one reserved null-text sentinel, and two
      residual directions carrying continuous descriptors (bounding-box fill
      ratio and mean intensity) so that image embeddings are not exactly equal
      to text embeddings even without misalignment.
    """

    def __init__(self, config: ToyEmbedderConfig | None = None):
        self.config = config or ToyEmbedderConfig()
        d = self.config.d_embed
        self.d_embed = d
        self.input_size = self.config.input_size
        self._color_terms = tuple(name for name, _ in self.config.colors)
        self._palette = np.array([rgb for _, rgb in self.config.colors], dtype=np.float64)
        self._shape_terms = tuple(self.config.shape_terms)
        n_c, n_s = len(self._color_terms), len(self._shape_terms)
        eye = np.eye(d)
        self._color_basis = {t: eye[i] for i, t in enumerate(self._color_terms)}
        self._shape_basis = {t: eye[n_c + i] for i, t in enumerate(self._shape_terms)}
        self._null_content = eye[n_c + n_s]
        self._null_text = eye[n_c + n_s + 1]
        self._residual = (eye[n_c + n_s + 2], eye[n_c + n_s + 3])
        if self.config.misalignment_seed is None:
            self.misalignment = np.eye(d)
        else:
            self.misalignment = random_orthogonal(d, self.config.misalignment_seed)
        ortho_err = np.abs(self.misalignment @ self.misalignment.T - np.eye(d)).max()
        if ortho_err > 1e-6:
            raise ValueError(f"misalignment not orthogonal (err={ortho_err:.2e})")
        self._fill_targets = {t: shapes.bbox_fill_ratio(t) for t in self._shape_terms}

    # -- text side ----------------------------------------------------------

    def parse_prompt(self, prompt: str) -> PromptFeatures:
        """Extract vocabulary features: "{color} {shape}" clauses and
        "{color} background" mentions. Everything else is filler."""
        tokens = re.findall(r"[a-z]+", prompt.lower())
        clauses = []
        backgrounds = []
        for a, b in zip(tokens, tokens[1:]):
            if a in self._color_terms and b in self._shape_terms:
                clauses.append((a, b))
            elif a in self._color_terms and b == "background":
                backgrounds.append(a)
        return PromptFeatures(clauses=tuple(clauses), backgrounds=tuple(backgrounds))

    def canonical_text_embedding(self, prompt: str) -> np.ndarray:
        """Text embedding before misalignment (the shared-space coordinates)."""
        feats = self.parse_prompt(prompt)
        if not feats:
            raise EmbeddingError(f"out-of-vocabulary prompt: {prompt!r}")
        v = np.zeros(self.d_embed)
        for color, shape in feats.clauses:
            v += self._color_basis[color] + self._shape_basis[shape]
        for color in feats.backgrounds:
            v += self._color_basis[color]
        return unit(v)

    def embed_text(self, prompt: str) -> np.ndarray:
        return self.misalignment @ self.canonical_text_embedding(prompt)

    @property
    def null_text_vector(self) -> np.ndarray:
        """Reserved sentinel for the dropped global-text condition; never
        produced by embed_text."""
        return self._null_text.copy()

    # -- image side ----------------------------------------------------------

    def embed_image(self, patch: np.ndarray) -> np.ndarray:
        patch = np.asarray(patch, dtype=np.float64)
        if patch.ndim != 3 or patch.shape[2] != 3 or patch.shape[0] != patch.shape[1]:
            raise EmbeddingError(f"patch must be square SxSx3, got {patch.shape}")
        support = patch.max(axis=2) > SUPPORT_CUTOFF
        if not support.any():
            return self._null_content.copy()
        pixels = patch[support]
        # area-weighted palette classification
        dists = np.linalg.norm(pixels[:, None, :] - self._palette[None, :, :], axis=2)
        nearest = dists.argmin(axis=1)
        weights = np.bincount(nearest, minlength=len(self._color_terms)) / len(pixels)
        v = weights @ np.stack([self._color_basis[t] for t in self._color_terms])
        # shape from the support's bounding-box fill ratio
        rows = np.flatnonzero(support.any(axis=1))
        cols = np.flatnonzero(support.any(axis=0))
        box_area = (rows[-1] - rows[0] + 1) * (cols[-1] - cols[0] + 1)
        fill = float(support.sum()) / float(box_area)
        shape_term = min(self._fill_targets, key=lambda t: abs(self._fill_targets[t] - fill))
        v = v + self._shape_basis[shape_term]
        # continuous descriptors keep the image space from being exactly discrete
        v = v + _RESIDUAL_SCALE * (fill - 0.75) * self._residual[0]
        v = v + _RESIDUAL_SCALE * (float(pixels.mean()) - 0.5) * self._residual[1]
        return unit(v)

    # -- utilities -----------------------------------------------------------

    def color_rgb(self, term: str) -> tuple[float, float, float]:
        idx = self._color_terms.index(term)
        return tuple(self._palette[idx])

    @property
    def color_terms(self) -> tuple[str, ...]:
        return self._color_terms

    @property
    def shape_terms(self) -> tuple[str, ...]:
        return self._shape_terms

    def canonical_patch(self, color: str, shape: str) -> np.ndarray:
        """Reference rendering of one vocabulary item: the shape in that color
        on a blacked-out square, sized like a preprocessed segment crop."""
        s = self.input_size
        half = s / 2.0 - 1.0
        mask = shapes.shape_mask(shape, s, s, s / 2.0, s / 2.0, half)
        patch = np.zeros((s, s, 3))
        patch[mask] = self.color_rgb(color)
        return patch

    def canonical_image_embedding(self, color: str, shape: str) -> np.ndarray:
        return self.embed_image(self.canonical_patch(color, shape))

    def vocabulary_pairs(self) -> list[tuple[str, np.ndarray, np.ndarray]]:
        """(caption, text embedding, image embedding) over the full vocabulary."""
        out = []
        for color in self._color_terms:
            for shape in self._shape_terms:
                caption = f"a {color} {shape}"
                out.append(
                    (caption, self.embed_text(caption), self.canonical_image_embedding(color, shape))
                )
        return out


def create_embedder(name: str = "toy", **config) -> ToyJointEmbedder:
    """Embedder factory used by run configs ("toy" is the only built-in)."""
    if name == "toy":
        field_names = {f for f in ToyEmbedderConfig.__dataclass_fields__}
        unknown = set(config) - field_names
        if unknown:
            raise ValueError(f"unknown embedder config keys: {sorted(unknown)}")
        return ToyJointEmbedder(ToyEmbedderConfig(**config))
    raise ValueError(f"unknown embedder: {name!r}")
