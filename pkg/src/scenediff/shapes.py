"""Analytic shape rasterizers shared by the toy embedder and the corpus generator.

All masks are boolean H x W grids; a pixel belongs to a shape iff its center
(col + 0.5, row + 0.5) satisfies the analytic membership test.
"""

from __future__ import annotations

import numpy as np

SHAPE_TERMS = ("circle", "square", "triangle")


def _pixel_centers(height: int, width: int):
    ys = np.arange(height, dtype=np.float64) + 0.5
    xs = np.arange(width, dtype=np.float64) + 0.5
    return np.meshgrid(ys, xs, indexing="ij")


def circle_mask(height: int, width: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = _pixel_centers(height, width)
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2


def square_mask(height: int, width: int, cy: float, cx: float, half: float) -> np.ndarray:
    yy, xx = _pixel_centers(height, width)
    return (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)


def triangle_mask(height: int, width: int, cy: float, cx: float, half: float) -> np.ndarray:
    """Upright isosceles triangle: apex at (cy - half, cx), base at cy + half."""
    yy, xx = _pixel_centers(height, width)
    # Normalized height from apex (0) to base (1); width grows linearly.
    t = (yy - (cy - half)) / (2.0 * half)
    inside_y = (t >= 0.0) & (t <= 1.0)
    return inside_y & (np.abs(xx - cx) <= t * half)


def shape_mask(term: str, height: int, width: int, cy: float, cx: float, size: float) -> np.ndarray:
    """Rasterize a vocabulary shape. `size` is the radius / half-side."""
    if term == "circle":
        return circle_mask(height, width, cy, cx, size)
    if term == "square":
        return square_mask(height, width, cy, cx, size)
    if term == "triangle":
        return triangle_mask(height, width, cy, cx, size)
    raise ValueError(f"unknown shape term: {term!r}")


def bbox_fill_ratio(term: str) -> float:
    """Area of the shape divided by the area of its tight bounding box."""
    if term == "circle":
        return float(np.pi / 4.0)
    if term == "square":
        return 1.0
    if term == "triangle":
        return 0.5
    raise ValueError(f"unknown shape term: {term!r}")
