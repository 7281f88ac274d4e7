import type { Point } from "./raster.js";
import type { Mask } from "./rle.js";
import type { Segment } from "./scene.js";

// Presentation-only palette; segment colors carry no meaning, they just keep
// masks visually distinct while sketching.
export const SEGMENT_COLORS = [
  { fill: "rgba(59, 130, 246, 0.45)", stroke: "rgb(59, 130, 246)" },
  { fill: "rgba(34, 197, 94, 0.45)", stroke: "rgb(34, 197, 94)" },
  { fill: "rgba(245, 158, 11, 0.45)", stroke: "rgb(245, 158, 11)" },
  { fill: "rgba(168, 85, 247, 0.45)", stroke: "rgb(168, 85, 247)" },
  { fill: "rgba(236, 72, 153, 0.45)", stroke: "rgb(236, 72, 153)" },
  { fill: "rgba(6, 182, 212, 0.45)", stroke: "rgb(6, 182, 212)" },
];

export function segmentColor(index: number) {
  return SEGMENT_COLORS[index % SEGMENT_COLORS.length]!;
}

const BLOCKED_FILL = "rgba(239, 68, 68, 0.8)";

export interface SketchView {
  h: number;
  w: number;
  /** Display pixels per mask pixel. */
  scale: number;
}

function fillMask(
  ctx: CanvasRenderingContext2D,
  view: SketchView,
  mask: Mask,
  style: string
): void {
  ctx.fillStyle = style;
  for (let i = 0; i < view.h; i++) {
    for (let j = 0; j < view.w; j++) {
      if (mask[i * view.w + j]) {
        ctx.fillRect(j * view.scale, i * view.scale, view.scale, view.scale);
      }
    }
  }
}

function drawGrid(ctx: CanvasRenderingContext2D, view: SketchView): void {
  ctx.strokeStyle = "rgba(148, 163, 184, 0.25)";
  ctx.lineWidth = 1;
  ctx.beginPath();
  for (let j = 0; j <= view.w; j++) {
    ctx.moveTo(j * view.scale + 0.5, 0);
    ctx.lineTo(j * view.scale + 0.5, view.h * view.scale);
  }
  for (let i = 0; i <= view.h; i++) {
    ctx.moveTo(0, i * view.scale + 0.5);
    ctx.lineTo(view.w * view.scale, i * view.scale + 0.5);
  }
  ctx.stroke();
}

function drawPolyline(
  ctx: CanvasRenderingContext2D,
  view: SketchView,
  points: Point[],
  stroke: string,
  close: boolean
): void {
  if (points.length === 0) return;
  ctx.strokeStyle = stroke;
  ctx.lineWidth = 2;
  ctx.beginPath();
  points.forEach((p, i) => {
    const x = p.x * view.scale;
    const y = p.y * view.scale;
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  if (close) ctx.closePath();
  ctx.stroke();
  ctx.fillStyle = stroke;
  points.forEach((p, i) => {
    ctx.beginPath();
    ctx.arc(p.x * view.scale, p.y * view.scale, i === 0 ? 5 : 3.5, 0, Math.PI * 2);
    ctx.fill();
  });
}

export interface SketchState {
  segments: Segment[];
  /** In-progress polygon vertices, if the polygon tool is mid-loop. */
  pendingPolygon: Point[];
  /** Live brush stroke raster, if dragging. */
  pendingBrush: Mask | null;
  /** Pixels that blocked the last rejected stroke; flashed over the sketch. */
  blocked: Mask | null;
}

/** Repaint the whole sketch surface from scratch. */
export function renderSketch(
  ctx: CanvasRenderingContext2D,
  view: SketchView,
  state: SketchState
): void {
  ctx.fillStyle = "#0b1120";
  ctx.fillRect(0, 0, view.w * view.scale, view.h * view.scale);
  drawGrid(ctx, view);
  state.segments.forEach((seg) => {
    const color = segmentColor(seg.colorIndex);
    fillMask(ctx, view, seg.mask, color.fill);
    if (seg.polygon) drawPolyline(ctx, view, seg.polygon, color.stroke, true);
  });
  if (state.pendingBrush) {
    fillMask(ctx, view, state.pendingBrush, "rgba(226, 232, 240, 0.5)");
  }
  if (state.pendingPolygon.length > 0) {
    drawPolyline(ctx, view, state.pendingPolygon, "rgba(226, 232, 240, 0.9)", false);
  }
  if (state.blocked) {
    fillMask(ctx, view, state.blocked, BLOCKED_FILL);
  }
}
