import { stampDisk, type Point } from "./raster.js";
import { emptyMask, type Mask } from "./rle.js";

/**
 * Polygon tool state machine. Vertices accumulate in pixel coordinates;
 * clicking close to the first vertex (within `closeRadius` pixels) closes the
 * loop. The tool itself is DOM-free; the canvas layer feeds it pointer
 * positions already converted to pixel space.
 */
export class PolygonTool {
  points: Point[] = [];
  readonly closeRadius: number;

  constructor(closeRadius = 1.0) {
    this.closeRadius = closeRadius;
  }

  get active(): boolean {
    return this.points.length > 0;
  }

  /** True when a click at p would close the loop instead of adding a vertex. */
  wouldClose(p: Point): boolean {
    if (this.points.length < 3) return false;
    const first = this.points[0]!;
    const dx = first.x - p.x;
    const dy = first.y - p.y;
    return dx * dx + dy * dy <= this.closeRadius * this.closeRadius;
  }

  /** Add a vertex, or close and return the finished polygon. */
  addPoint(p: Point): Point[] | null {
    if (this.wouldClose(p)) {
      const done = this.points;
      this.points = [];
      return done;
    }
    this.points.push(p);
    return null;
  }

  undo(): void {
    this.points.pop();
  }

  cancel(): void {
    this.points = [];
  }
}

/**
 * Brush tool: drag paints disks into a scratch mask at canvas resolution;
 * releasing commits the accumulated raster as one segment.
 */
export class BrushTool {
  readonly h: number;
  readonly w: number;
  radius: number;
  private scratch: Mask | null = null;

  constructor(h: number, w: number, radius = 1.5) {
    this.h = h;
    this.w = w;
    this.radius = radius;
  }

  get active(): boolean {
    return this.scratch !== null;
  }

  /** Current stroke raster (live preview), or null when idle. */
  preview(): Mask | null {
    return this.scratch;
  }

  begin(p: Point): void {
    this.scratch = emptyMask(this.h, this.w);
    stampDisk(this.scratch, this.h, this.w, p.x, p.y, this.radius);
  }

  move(p: Point): void {
    if (!this.scratch) return;
    stampDisk(this.scratch, this.h, this.w, p.x, p.y, this.radius);
  }

  /** Finish the stroke and return its raster. */
  end(): Mask | null {
    const done = this.scratch;
    this.scratch = null;
    return done;
  }

  cancel(): void {
    this.scratch = null;
  }
}
