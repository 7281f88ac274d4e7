import type { Mask } from "./rle.js";

/** A polygon vertex in pixel coordinates (x right, y down). */
export type Point = { x: number; y: number };

/**
 * Even-odd fill of a closed polygon against pixel centers.
 *
 * A pixel (row i, column j) is inside iff a horizontal ray cast from its
 * center (j + 0.5, i + 0.5) crosses the polygon boundary an odd number of
 * times. Horizontal edges are skipped; an edge straddles a scanline when
 * exactly one endpoint satisfies y <= yc. The crossing abscissa is computed
 * as x1 + (yc - y1) * (x2 - x1) / (y2 - y1), the same double-precision
 * expression the service evaluates, so both sides agree on every pixel.
 */
export function rasterizePolygon(vertices: Point[], h: number, w: number): Mask {
  if (vertices.length < 3) {
    throw new Error("polygon needs at least 3 vertices");
  }
  const mask = new Uint8Array(h * w);
  const n = vertices.length;
  for (let i = 0; i < h; i++) {
    const yc = i + 0.5;
    for (let j = 0; j < w; j++) {
      const xc = j + 0.5;
      let crossings = 0;
      for (let a = 0; a < n; a++) {
        const p1 = vertices[a]!;
        const p2 = vertices[(a + 1) % n]!;
        if (p1.y === p2.y) continue;
        if ((p1.y <= yc) !== (p2.y <= yc)) {
          const xAt = p1.x + ((yc - p1.y) * (p2.x - p1.x)) / (p2.y - p1.y);
          if (xc < xAt) crossings += 1;
        }
      }
      if (crossings % 2 === 1) mask[i * w + j] = 1;
    }
  }
  return mask;
}

/**
 * Stamp a filled disk into a mask (brush stroke support). A pixel is painted
 * when its center lies within `radius` of (cx, cy).
 */
export function stampDisk(mask: Mask, h: number, w: number, cx: number, cy: number, radius: number): void {
  const r2 = radius * radius;
  const i0 = Math.max(0, Math.floor(cy - radius - 1));
  const i1 = Math.min(h - 1, Math.ceil(cy + radius + 1));
  const j0 = Math.max(0, Math.floor(cx - radius - 1));
  const j1 = Math.min(w - 1, Math.ceil(cx + radius + 1));
  for (let i = i0; i <= i1; i++) {
    const dy = i + 0.5 - cy;
    for (let j = j0; j <= j1; j++) {
      const dx = j + 0.5 - cx;
      if (dx * dx + dy * dy <= r2) mask[i * w + j] = 1;
    }
  }
}
