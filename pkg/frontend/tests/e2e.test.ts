/**
 * End-to-end against a real service process: a scene drawn through the same
 * tool + model code paths the page uses is exported, validated and
 * re-rasterized by the service (which must agree pixel-for-pixel), then a
 * generation job runs to completion and returns a PNG.
 *
 * The first run trains a small throwaway checkpoint into frontend/.e2e and
 * reuses it afterwards, so only the initial run pays the training cost.
 */

import { spawn, spawnSync, type ChildProcessWithoutNullStreams } from "node:child_process";
import fs from "node:fs";
import path from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { ServiceClient, ServiceError } from "../src/api";
import { BrushTool, PolygonTool } from "../src/draw";
import { defaultGuidance, toWire } from "../src/guidance";
import { rasterizePolygon, type Point } from "../src/raster";
import { encodeRle } from "../src/rle";
import { SceneModel } from "../src/scene";

const here = path.dirname(fileURLToPath(import.meta.url));
const e2eDir = path.join(here, "..", ".e2e");
const ckptDir = path.join(e2eDir, "ckpts");
const ckptPath = path.join(ckptDir, "tiny.ckpt");

const TRAIN_SCRIPT = `
import sys
from scenediff.data import GenConfig, save_corpus
from scenediff.diffusion.training import TrainConfig, train

root = sys.argv[1]
corpus = root + "/corpus"
save_corpus(corpus, 8, GenConfig(), seed=3, val_fraction=0.0)
train(TrainConfig(
    corpus=corpus,
    out=root + "/ckpts/tiny.ckpt",
    steps=30,
    batch_size=8,
    lr=1e-3,
    base_channels=16,
    ch_mult=(1, 2),
    blocks_per_level=1,
    num_timesteps=100,
    log_every=0,
    seed=0,
))
`;

function trainTinyCheckpoint(): void {
  fs.mkdirSync(e2eDir, { recursive: true });
  const run = spawnSync("python3", ["-c", TRAIN_SCRIPT, e2eDir], {
    encoding: "utf-8",
    timeout: 540_000,
  });
  if (run.status !== 0 || !fs.existsSync(ckptPath)) {
    throw new Error(`checkpoint training failed:\n${run.stdout}\n${run.stderr}`);
  }
}

let server: ChildProcessWithoutNullStreams | null = null;
let serverLog = "";
let client: ServiceClient;

async function startServer(): Promise<ServiceClient> {
  const port = 18000 + Math.floor(Math.random() * 10000);
  const jobsDir = fs.mkdtempSync(path.join(e2eDir, "jobs-"));
  server = spawn(
    "python3",
    [
      "-m",
      "scenediff.cli",
      "serve",
      "--checkpoints",
      ckptDir,
      "--jobs",
      jobsDir,
      "--port",
      String(port),
    ],
    { stdio: "pipe" }
  );
  server.stdout.on("data", (d) => (serverLog += d));
  server.stderr.on("data", (d) => (serverLog += d));
  const candidate = new ServiceClient(`http://127.0.0.1:${port}`);
  const deadline = Date.now() + 120_000;
  for (;;) {
    if (server.exitCode !== null) {
      throw new Error(`service exited with ${server.exitCode}:\n${serverLog}`);
    }
    try {
      if (await candidate.health()) return candidate;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      throw new Error(`service never became healthy:\n${serverLog}`);
    }
    await new Promise((r) => setTimeout(r, 500));
  }
}

beforeAll(async () => {
  if (!fs.existsSync(ckptPath)) trainTinyCheckpoint();
  client = await startServer();
});

afterAll(() => {
  server?.kill("SIGTERM");
});

/** Draw the reference scene exactly as the page would: tools in, masks out. */
function drawScene(): SceneModel {
  const model = new SceneModel(32, 32);
  model.globalPrompt = "two shapes on a plain ground";

  // polygon tool: irregular pentagon with fractional vertices, closed by
  // clicking back near the first vertex
  const tool = new PolygonTool(1.0);
  const clicks: Point[] = [
    { x: 3.2, y: 4.1 },
    { x: 13.7, y: 2.9 },
    { x: 15.4, y: 10.2 },
    { x: 9.1, y: 14.8 },
    { x: 2.6, y: 11.3 },
  ];
  let polygon: Point[] | null = null;
  for (const p of clicks) polygon = tool.addPoint(p);
  expect(polygon).toBeNull();
  polygon = tool.addPoint({ x: 3.0, y: 4.5 }); // close
  expect(polygon).toEqual(clicks);
  const added = model.addSegment(rasterizePolygon(polygon!, 32, 32), polygon);
  expect(added.ok).toBe(true);
  model.segments[0]!.prompt = "a red circle";

  // brush tool: short stroke in the free corner
  const brush = new BrushTool(32, 32, 2.0);
  brush.begin({ x: 24, y: 24 });
  brush.move({ x: 27, y: 25 });
  brush.move({ x: 28, y: 28 });
  const stroke = brush.end();
  const strokeAdded = model.addSegment(stroke!, null);
  expect(strokeAdded.ok).toBe(true);
  model.segments[1]!.prompt = "a blue square";

  return model;
}

function pngSize(bytes: Uint8Array): { width: number; height: number } {
  const magic = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];
  magic.forEach((b, i) => expect(bytes[i]).toBe(b));
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  return { width: view.getUint32(16), height: view.getUint32(20) };
}

describe("service e2e", () => {
  it("reports healthy and lists the toy checkpoint", async () => {
    expect(await client.health()).toBe(true);
    const checkpoints = await client.checkpoints();
    const tiny = checkpoints.find((c) => c.id === "tiny");
    expect(tiny).toBeDefined();
    expect(tiny!.resolution).toEqual([32, 32]);
    expect(tiny!.space).toBe("pixel");
  });

  it("re-rasterizes an exported drawing pixel-for-pixel", async () => {
    const model = drawScene();
    // export geometry so the service rasterizes the polygon itself
    const doc = model.toDocument(true);
    expect(doc.segments[0]!.polygon).toBeDefined();
    expect(doc.segments[1]!.mask_rle).toBeDefined();
    const echoed = await client.rasterize(doc);
    expect(echoed.canvas).toEqual([32, 32]);
    expect(echoed.segments).toHaveLength(2);
    echoed.segments.forEach((seg, i) => {
      expect(seg.prompt).toBe(model.segments[i]!.prompt);
      expect(seg.mask_rle).toBe(encodeRle(model.segments[i]!.mask));
    });
  });

  it("rejects an exported scene with overlapping raster segments", async () => {
    const doc = drawScene().toDocument();
    doc.segments.push({ ...doc.segments[0]! });
    const err = await client.rasterize(doc).catch((e) => e);
    expect(err).toBeInstanceOf(ServiceError);
    expect(err.status).toBe(400);
    expect(err.detail).toContain("masks not disjoint");
  });

  it(
    "runs a drawn scene to a rendered PNG, deterministically per seed",
    { timeout: 120_000 },
    async () => {
      const doc = drawScene().toDocument();
      const guidance = toWire(defaultGuidance()); // fast, s = 3
      const opts = { checkpoint: "tiny", guidance, seed: 123, steps: 6 };

      const jobId = await client.generate(doc, opts);
      const states: string[] = [];
      const final = await client.waitForJob(jobId, {
        onUpdate: (s) => states.push(s.state),
        timeoutMs: 90_000,
      });
      expect(final.state).toBe("DONE");
      expect(final.error).toBeNull();
      expect(states[states.length - 1]).toBe("DONE");

      const image = await client.fetchImage(jobId);
      expect(pngSize(image)).toEqual({ width: 32, height: 32 });

      // byte-identical rerun with the same seed
      const again = await client.generate(doc, opts);
      expect((await client.waitForJob(again, { timeoutMs: 90_000 })).state).toBe("DONE");
      expect(await client.fetchImage(again)).toEqual(image);

      // a different seed must change the image
      const other = await client.generate(doc, { ...opts, seed: 124 });
      expect((await client.waitForJob(other, { timeoutMs: 90_000 })).state).toBe("DONE");
      expect(await client.fetchImage(other)).not.toEqual(image);
    }
  );

  it(
    "surfaces job failures verbatim and withholds the image",
    { timeout: 60_000 },
    async () => {
      const small = new SceneModel(16, 16);
      small.globalPrompt = "a scene";
      const doc = small.toDocument();
      const jobId = await client.generate(doc, {
        checkpoint: "tiny",
        guidance: toWire(defaultGuidance()),
        seed: 0,
        steps: 4,
      });
      const final = await client.waitForJob(jobId, { timeoutMs: 60_000 });
      expect(final.state).toBe("FAILED");
      expect(final.error).toMatch(/does not match checkpoint/);

      const err = await client.fetchImage(jobId).catch((e) => e);
      expect(err).toBeInstanceOf(ServiceError);
      expect(err.status).toBe(409);
      expect(err.detail).toContain("FAILED");
    }
  );
});
