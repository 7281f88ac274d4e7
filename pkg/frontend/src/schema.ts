/**
 * Wire schemas for the generation service API, mirrored with zod so every
 * response the client touches is validated before use.
 */

import { z } from "zod";

export const segmentDocumentSchema = z
  .object({
    prompt: z.string(),
    mask_rle: z.string().optional(),
    polygon: z.array(z.tuple([z.number(), z.number()])).optional(),
  })
  .refine((seg) => seg.mask_rle !== undefined || seg.polygon !== undefined, {
    message: "segment needs mask_rle or polygon",
  });

export const sceneDocumentSchema = z.object({
  global_prompt: z.string(),
  canvas: z.tuple([z.number().int().positive(), z.number().int().positive()]),
  segments: z.array(segmentDocumentSchema),
});

export type SceneDocument = z.infer<typeof sceneDocumentSchema>;
export type SegmentDocument = z.infer<typeof segmentDocumentSchema>;

// scales is a named mapping: {joint} in fast mode, {global, scene} in multi
export const guidanceWireSchema = z.union([
  z.object({ mode: z.literal("fast"), scales: z.object({ joint: z.number() }) }),
  z.object({
    mode: z.literal("multi"),
    scales: z.object({ global: z.number(), scene: z.number() }),
  }),
]);

export type GuidanceWire = z.infer<typeof guidanceWireSchema>;

export const healthSchema = z.object({ ok: z.boolean() });

export const checkpointInfoSchema = z.object({
  id: z.string(),
  space: z.enum(["pixel", "latent"]),
  resolution: z.tuple([z.number().int(), z.number().int()]),
  d_embed: z.number().int(),
  representation: z.enum(["st", "binary"]),
});

export const checkpointListSchema = z.array(checkpointInfoSchema);
export type CheckpointInfo = z.infer<typeof checkpointInfoSchema>;

export const jobStateSchema = z.enum(["QUEUED", "RUNNING", "DONE", "FAILED"]);
export type JobState = z.infer<typeof jobStateSchema>;

export const jobStatusSchema = z.object({
  id: z.string(),
  state: jobStateSchema,
  error: z.string().nullable(),
  created: z.number(),
  started: z.number().nullable(),
  finished: z.number().nullable(),
  checkpoint: z.string(),
  seed: z.number().int(),
});

export type JobStatus = z.infer<typeof jobStatusSchema>;

export const generateResponseSchema = z.object({ job_id: z.string() });

export const rasterizeResponseSchema = z.object({
  canvas: z.tuple([z.number().int(), z.number().int()]),
  segments: z.array(z.object({ prompt: z.string(), mask_rle: z.string() })),
});

export type RasterizeResponse = z.infer<typeof rasterizeResponseSchema>;

// FastAPI error envelope; detail is a string for every route we call
export const errorDetailSchema = z.object({ detail: z.unknown() });
