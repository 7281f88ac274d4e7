import { rasterizePolygon, type Point } from "./raster.js";
import {
  decodeRle,
  encodeRle,
  maskArea,
  maskIntersection,
  type Mask,
} from "./rle.js";
import { sceneDocumentSchema, type SceneDocument } from "./schema.js";

/**
 * One drawn segment. `polygon` is kept when the segment came from the polygon
 * tool so it can be re-exported as geometry; brush and imported segments are
 * raster only. `colorIndex` drives presentation-only tinting, never payload.
 */
export interface Segment {
  prompt: string;
  mask: Mask;
  polygon: Point[] | null;
  colorIndex: number;
}

export type AddSegmentResult =
  | { ok: true; index: number }
  | { ok: false; reason: string; overlap: Mask | null };

/**
 * The local scene being sketched: a fixed canvas (sized to the checkpoint's
 * resolution), a global prompt, and pairwise-disjoint segments.
 */
export class SceneModel {
  readonly h: number;
  readonly w: number;
  globalPrompt = "";
  segments: Segment[] = [];

  constructor(h: number, w: number) {
    if (h < 1 || w < 1) throw new Error(`invalid canvas size ${h}x${w}`);
    this.h = h;
    this.w = w;
  }

  /** Union of all committed segment masks. */
  coverage(): Mask {
    const cover = new Uint8Array(this.h * this.w);
    for (const seg of this.segments) {
      for (let i = 0; i < cover.length; i++) if (seg.mask[i]) cover[i] = 1;
    }
    return cover;
  }

  /**
   * Pixels of `mask` already claimed by committed segments, or null when the
   * mask is free to add. Used to highlight exactly what blocks a stroke.
   */
  blockedBy(mask: Mask): Mask | null {
    return maskIntersection(this.coverage(), mask);
  }

  addSegment(mask: Mask, polygon: Point[] | null = null): AddSegmentResult {
    if (mask.length !== this.h * this.w) {
      return { ok: false, reason: "mask does not match the canvas", overlap: null };
    }
    if (maskArea(mask) === 0) {
      return { ok: false, reason: "segment mask has no pixels", overlap: null };
    }
    const overlap = this.blockedBy(mask);
    if (overlap) {
      return { ok: false, reason: "overlaps an existing segment", overlap };
    }
    const index = this.segments.length;
    this.segments.push({ prompt: "", mask, polygon, colorIndex: index });
    return { ok: true, index };
  }

  removeSegment(index: number): void {
    this.segments.splice(index, 1);
  }

  clear(): void {
    this.segments = [];
  }

  /** Prompts that block submission: empty global or any empty segment prompt. */
  emptyPrompts(): string[] {
    const missing: string[] = [];
    if (!this.globalPrompt.trim()) missing.push("global prompt");
    this.segments.forEach((seg, i) => {
      if (!seg.prompt.trim()) missing.push(`segment ${i + 1} prompt`);
    });
    return missing;
  }

  /**
   * Serialize to the scene file schema. With `keepPolygons`, segments drawn
   * as polygons export their geometry (so the service re-rasterizes them);
   * otherwise every segment exports its raster, which is exactly what the
   * preview shows.
   */
  toDocument(keepPolygons = false): SceneDocument {
    return {
      global_prompt: this.globalPrompt,
      canvas: [this.h, this.w],
      segments: this.segments.map((seg) =>
        keepPolygons && seg.polygon
          ? {
              prompt: seg.prompt,
              polygon: seg.polygon.map((p) => [p.x, p.y] as [number, number]),
            }
          : { prompt: seg.prompt, mask_rle: encodeRle(seg.mask) }
      ),
    };
  }
}

/** Parse, validate and rasterize a scene document into a fresh model. */
export function fromDocument(doc: unknown): SceneModel {
  const parsed = sceneDocumentSchema.parse(doc);
  const [h, w] = parsed.canvas;
  const model = new SceneModel(h, w);
  model.globalPrompt = parsed.global_prompt;
  parsed.segments.forEach((seg, i) => {
    const mask =
      seg.mask_rle !== undefined
        ? decodeRle(seg.mask_rle, h, w)
        : rasterizePolygon(
            seg.polygon!.map(([x, y]) => ({ x, y })),
            h,
            w
          );
    const polygon = seg.polygon ? seg.polygon.map(([x, y]) => ({ x, y })) : null;
    const added = model.addSegment(mask, polygon);
    if (!added.ok) throw new Error(`segment ${i}: ${added.reason}`);
    model.segments[added.index]!.prompt = seg.prompt;
  });
  return model;
}
