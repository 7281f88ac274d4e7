import type { GuidanceWire, JobState, SceneDocument } from "./schema.js";

/**
 * One submitted job, kept for side-by-side what-if comparison: the exact
 * inputs (scene + guidance + seed) next to the image they produced.
 */
export interface HistoryEntry {
  jobId: string;
  checkpoint: string;
  seed: number;
  guidance: GuidanceWire;
  scene: SceneDocument;
  state: JobState;
  error: string | null;
  imageUrl: string | null;
}

export class History {
  readonly limit: number;
  entries: HistoryEntry[] = [];

  constructor(limit = 24) {
    this.limit = limit;
  }

  /** Newest first; oldest entries fall off past the limit. */
  push(entry: HistoryEntry): void {
    this.entries.unshift(entry);
    if (this.entries.length > this.limit) this.entries.length = this.limit;
  }

  update(jobId: string, patch: Partial<HistoryEntry>): void {
    const entry = this.entries.find((e) => e.jobId === jobId);
    if (entry) Object.assign(entry, patch);
  }
}

/** Compact one-line description of a guidance wire value for labels. */
export function describeGuidance(g: GuidanceWire): string {
  if (g.mode === "fast") return `fast s=${g.scales.joint}`;
  return `multi s_global=${g.scales.global} s_scene=${g.scales.scene}`;
}
