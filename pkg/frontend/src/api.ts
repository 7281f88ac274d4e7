import {
  checkpointListSchema,
  errorDetailSchema,
  generateResponseSchema,
  healthSchema,
  jobStatusSchema,
  rasterizeResponseSchema,
  type CheckpointInfo,
  type GuidanceWire,
  type JobStatus,
  type RasterizeResponse,
  type SceneDocument,
} from "./schema.js";

/** Non-2xx response; `detail` carries the service's own message verbatim. */
export class ServiceError extends Error {
  readonly status: number;
  readonly detail: string;

  constructor(status: number, detail: string) {
    super(`service responded ${status}: ${detail}`);
    this.status = status;
    this.detail = detail;
  }
}

export interface GenerateOptions {
  checkpoint: string;
  guidance: GuidanceWire;
  seed: number;
  steps?: number;
}

export interface WaitOptions {
  /** First poll delay in ms; doubles-ish (x1.5) up to maxPollMs. */
  pollMs?: number;
  maxPollMs?: number;
  timeoutMs?: number;
  onUpdate?: (status: JobStatus) => void;
}

const sleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export class ServiceClient {
  readonly baseUrl: string;

  constructor(baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const res = await fetch(this.baseUrl + path, init);
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = errorDetailSchema.parse(await res.json());
        detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
      } catch {
        // keep the status text when the body is not the error envelope
      }
      throw new ServiceError(res.status, detail);
    }
    return res.json();
  }

  private post(path: string, body: unknown): Promise<unknown> {
    return this.request(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  async health(): Promise<boolean> {
    return healthSchema.parse(await this.request("/api/v1/health")).ok;
  }

  async checkpoints(): Promise<CheckpointInfo[]> {
    return checkpointListSchema.parse(await this.request("/api/v1/checkpoints"));
  }

  /** Server-side validation + rasterization of a scene document. */
  async rasterize(doc: SceneDocument): Promise<RasterizeResponse> {
    return rasterizeResponseSchema.parse(await this.post("/api/v1/scenes/rasterize", doc));
  }

  /** Enqueue a generation job; resolves to the job id. */
  async generate(doc: SceneDocument, opts: GenerateOptions): Promise<string> {
    const body = {
      ...doc,
      checkpoint: opts.checkpoint,
      guidance: opts.guidance,
      seed: opts.seed,
      ...(opts.steps !== undefined ? { steps: opts.steps } : {}),
    };
    return generateResponseSchema.parse(await this.post("/api/v1/generate", body)).job_id;
  }

  async job(jobId: string): Promise<JobStatus> {
    return jobStatusSchema.parse(await this.request(`/api/v1/jobs/${jobId}`));
  }

  imageUrl(jobId: string): string {
    return `${this.baseUrl}/api/v1/jobs/${jobId}/image`;
  }

  async fetchImage(jobId: string): Promise<Uint8Array> {
    const res = await fetch(this.imageUrl(jobId));
    if (!res.ok) {
      let detail = res.statusText;
      try {
        const body = errorDetailSchema.parse(await res.json());
        detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
      } catch {
        // non-JSON body
      }
      throw new ServiceError(res.status, detail);
    }
    return new Uint8Array(await res.arrayBuffer());
  }

  /** Poll with backoff until the job reaches DONE or FAILED. */
  async waitForJob(jobId: string, opts: WaitOptions = {}): Promise<JobStatus> {
    const { pollMs = 250, maxPollMs = 2000, timeoutMs = 600_000, onUpdate } = opts;
    const deadline = Date.now() + timeoutMs;
    let delay = pollMs;
    for (;;) {
      const status = await this.job(jobId);
      onUpdate?.(status);
      if (status.state === "DONE" || status.state === "FAILED") return status;
      if (Date.now() > deadline) {
        throw new Error(`job ${jobId} still ${status.state} after ${timeoutMs}ms`);
      }
      await sleep(delay);
      delay = Math.min(delay * 1.5, maxPollMs);
    }
  }
}
