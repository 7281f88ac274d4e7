import { ServiceClient, ServiceError } from "./api.js";
import { BrushTool, PolygonTool } from "./draw.js";
import { defaultGuidance, multiSceneLabel, toWire, type GuidanceState } from "./guidance.js";
import { describeGuidance, History, type HistoryEntry } from "./history.js";
import type { Point } from "./raster.js";
import { rasterizePolygon } from "./raster.js";
import { renderSketch, segmentColor, type SketchView } from "./render.js";
import { maskArea, type Mask } from "./rle.js";
import { fromDocument, SceneModel } from "./scene.js";
import type { CheckpointInfo } from "./schema.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const banner = el<HTMLDivElement>("banner");
const checkpointSelect = el<HTMLSelectElement>("checkpoint-select");
const checkpointInfo = el<HTMLSpanElement>("checkpoint-info");
const canvas = el<HTMLCanvasElement>("sketch");
const sketchHint = el<HTMLParagraphElement>("sketch-hint");
const segmentRows = el<HTMLDivElement>("segment-rows");
const globalPromptInput = el<HTMLInputElement>("global-prompt");
const submitButton = el<HTMLButtonElement>("submit");
const validationNote = el<HTMLParagraphElement>("validation-note");
const submitStatus = el<HTMLParagraphElement>("submit-status");
const resultImage = el<HTMLImageElement>("result-image");
const resultCaption = el<HTMLParagraphElement>("result-caption");
const historyStrip = el<HTMLDivElement>("history-strip");

// the studio is usually served statically next to the API; override with ?service=
const serviceBase =
  new URLSearchParams(location.search).get("service") ?? "http://127.0.0.1:8000";
const client = new ServiceClient(serviceBase);

let model = new SceneModel(32, 32);
let view: SketchView = { h: 32, w: 32, scale: 14 };
let checkpoints: CheckpointInfo[] = [];
let polygonTool = new PolygonTool();
let brushTool = new BrushTool(32, 32);
let activeTool: "polygon" | "brush" = "polygon";
let blockedFlash: Mask | null = null;
let blockedTimer: number | undefined;
const guidance: GuidanceState = defaultGuidance();
const history = new History();
let inFlight = false;

function showBanner(text: string): void {
  banner.textContent = text;
  banner.classList.remove("hidden");
}

function hideBanner(): void {
  banner.classList.add("hidden");
}

function hint(text: string): void {
  sketchHint.textContent = text;
}

function repaint(): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  renderSketch(ctx, view, {
    segments: model.segments,
    pendingPolygon: polygonTool.points,
    pendingBrush: brushTool.preview(),
    blocked: blockedFlash,
  });
}

function flashBlocked(overlap: Mask | null, reason: string): void {
  hint(`stroke rejected: ${reason}`);
  blockedFlash = overlap;
  window.clearTimeout(blockedTimer);
  blockedTimer = window.setTimeout(() => {
    blockedFlash = null;
    repaint();
  }, 900);
  repaint();
}

function resetSketchState(h: number, w: number): void {
  model = new SceneModel(h, w);
  model.globalPrompt = globalPromptInput.value; // typed text survives checkpoint switches
  const scale = Math.max(4, Math.floor(480 / Math.max(h, w)));
  view = { h, w, scale };
  canvas.width = w * scale;
  canvas.height = h * scale;
  polygonTool = new PolygonTool();
  brushTool = new BrushTool(h, w, brushTool.radius);
  blockedFlash = null;
  renderSegmentRows();
  refreshSubmitState();
  repaint();
}

function commitMask(mask: Mask, polygon: Point[] | null): void {
  const added = model.addSegment(mask, polygon);
  if (!added.ok) {
    flashBlocked(added.overlap, added.reason);
    return;
  }
  hint(`segment ${added.index + 1} added (${maskArea(mask)} px); give it a prompt`);
  renderSegmentRows();
  refreshSubmitState();
  repaint();
}

function renderSegmentRows(): void {
  segmentRows.replaceChildren();
  model.segments.forEach((seg, i) => {
    const row = document.createElement("div");
    row.className = "segment-row";
    const swatch = document.createElement("span");
    swatch.className = "swatch";
    swatch.style.background = segmentColor(seg.colorIndex).stroke;
    const input = document.createElement("input");
    input.type = "text";
    input.placeholder = `segment ${i + 1} prompt`;
    input.value = seg.prompt;
    input.addEventListener("input", () => {
      seg.prompt = input.value;
      refreshSubmitState();
    });
    const area = document.createElement("span");
    area.className = "muted";
    area.textContent = `${maskArea(seg.mask)} px`;
    const remove = document.createElement("button");
    remove.type = "button";
    remove.textContent = "×";
    remove.addEventListener("click", () => {
      model.removeSegment(i);
      renderSegmentRows();
      refreshSubmitState();
      repaint();
    });
    row.append(swatch, input, area, remove);
    segmentRows.append(row);
  });
}

function refreshSubmitState(): void {
  const missing = model.emptyPrompts();
  submitButton.disabled = missing.length > 0 || inFlight;
  validationNote.textContent = missing.length > 0 ? `waiting on: ${missing.join(", ")}` : "";
}

function canvasPoint(ev: MouseEvent): Point {
  const rect = canvas.getBoundingClientRect();
  return {
    x: ((ev.clientX - rect.left) / rect.width) * view.w,
    y: ((ev.clientY - rect.top) / rect.height) * view.h,
  };
}

canvas.addEventListener("click", (ev) => {
  if (activeTool !== "polygon") return;
  const closed = polygonTool.addPoint(canvasPoint(ev));
  if (closed) {
    commitMask(rasterizePolygon(closed, view.h, view.w), closed);
  } else {
    repaint();
  }
});

canvas.addEventListener("contextmenu", (ev) => {
  ev.preventDefault();
  polygonTool.cancel();
  brushTool.cancel();
  repaint();
});

canvas.addEventListener("pointerdown", (ev) => {
  if (activeTool !== "brush" || ev.button !== 0) return;
  brushTool.begin(canvasPoint(ev));
  canvas.setPointerCapture(ev.pointerId);
  repaint();
});

canvas.addEventListener("pointermove", (ev) => {
  if (activeTool !== "brush" || !brushTool.active) return;
  brushTool.move(canvasPoint(ev));
  repaint();
});

canvas.addEventListener("pointerup", () => {
  if (activeTool !== "brush") return;
  const stroke = brushTool.end();
  if (stroke && maskArea(stroke) > 0) commitMask(stroke, null);
  else repaint();
});

window.addEventListener("keydown", (ev) => {
  if (ev.key === "Escape") {
    polygonTool.cancel();
    brushTool.cancel();
    repaint();
  } else if (ev.key === "Backspace" && polygonTool.active) {
    ev.preventDefault();
    polygonTool.undo();
    repaint();
  }
});

for (const radio of document.querySelectorAll<HTMLInputElement>("input[name=tool]")) {
  radio.addEventListener("change", () => {
    activeTool = radio.value as "polygon" | "brush";
    polygonTool.cancel();
    brushTool.cancel();
    document.querySelector(".brush-only")?.classList.toggle("hidden", activeTool !== "brush");
    hint(
      activeTool === "polygon"
        ? "click to place vertices; click the first vertex again to close the loop"
        : "drag to paint; release to commit the stroke as a segment"
    );
    repaint();
  });
}

el<HTMLInputElement>("brush-radius").addEventListener("input", (ev) => {
  brushTool.radius = Number((ev.target as HTMLInputElement).value);
});

el<HTMLButtonElement>("undo-point").addEventListener("click", () => {
  polygonTool.undo();
  repaint();
});

el<HTMLButtonElement>("cancel-stroke").addEventListener("click", () => {
  polygonTool.cancel();
  brushTool.cancel();
  repaint();
});

el<HTMLButtonElement>("clear-segments").addEventListener("click", () => {
  model.clear();
  renderSegmentRows();
  refreshSubmitState();
  repaint();
});

globalPromptInput.addEventListener("input", () => {
  model.globalPrompt = globalPromptInput.value;
  refreshSubmitState();
});

// --- guidance controls -----------------------------------------------------

const fastControls = el<HTMLDivElement>("fast-controls");
const multiControls = el<HTMLDivElement>("multi-controls");
const sceneZeroNote = el<HTMLParagraphElement>("scene-zero-note");

for (const radio of document.querySelectorAll<HTMLInputElement>("input[name=gmode]")) {
  radio.addEventListener("change", () => {
    guidance.mode = radio.value as "fast" | "multi";
    fastControls.classList.toggle("hidden", guidance.mode !== "fast");
    multiControls.classList.toggle("hidden", guidance.mode !== "multi");
  });
}

function bindScale(sliderId: string, outputId: string, apply: (v: number) => void): void {
  const slider = el<HTMLInputElement>(sliderId);
  const output = el<HTMLOutputElement>(outputId);
  slider.addEventListener("input", () => {
    const v = Number(slider.value);
    output.textContent = slider.value;
    apply(v);
  });
}

bindScale("joint-scale", "joint-value", (v) => {
  guidance.joint = v;
});
bindScale("global-scale", "global-value", (v) => {
  guidance.global = v;
});
bindScale("scene-scale", "scene-value", (v) => {
  guidance.scene = v;
  sceneZeroNote.textContent = multiSceneLabel(v);
  sceneZeroNote.classList.toggle("hidden", v !== 0);
});

// --- seed / steps ----------------------------------------------------------

const seedInput = el<HTMLInputElement>("seed");
const stepsInput = el<HTMLInputElement>("steps");

el<HTMLButtonElement>("reroll-seed").addEventListener("click", () => {
  seedInput.value = String(Math.floor(Math.random() * 2 ** 31));
});

// --- submit / poll ---------------------------------------------------------

function renderHistory(): void {
  historyStrip.replaceChildren();
  for (const entry of history.entries) {
    const card = document.createElement("button");
    card.type = "button";
    card.className = "history-card";
    if (entry.imageUrl) {
      const img = document.createElement("img");
      img.src = entry.imageUrl;
      img.alt = "";
      card.append(img);
    }
    const caption = document.createElement("span");
    caption.textContent = `${entry.state.toLowerCase()} · seed ${entry.seed} · ${describeGuidance(entry.guidance)}`;
    card.append(caption);
    card.addEventListener("click", () => showResult(entry));
    historyStrip.append(card);
  }
}

function showResult(entry: HistoryEntry): void {
  if (entry.imageUrl) {
    resultImage.src = entry.imageUrl;
    resultImage.classList.remove("hidden");
  } else {
    resultImage.classList.add("hidden");
  }
  resultCaption.textContent =
    entry.state === "FAILED"
      ? `failed: ${entry.error}`
      : `seed ${entry.seed} · ${describeGuidance(entry.guidance)} · ${entry.checkpoint}`;
}

submitButton.addEventListener("click", async () => {
  if (inFlight) return;
  const checkpoint = checkpointSelect.value;
  if (!checkpoint) {
    submitStatus.textContent = "no checkpoint available";
    return;
  }
  let wire;
  try {
    wire = toWire(guidance);
  } catch (e) {
    submitStatus.textContent = String(e instanceof Error ? e.message : e);
    return;
  }
  const doc = model.toDocument();
  const seed = Number(seedInput.value) || 0;
  const steps = stepsInput.value ? Number(stepsInput.value) : undefined;
  inFlight = true;
  refreshSubmitState();
  submitStatus.textContent = "submitting…";
  try {
    const jobId = await client.generate(doc, { checkpoint, guidance: wire, seed, steps });
    const entry: HistoryEntry = {
      jobId,
      checkpoint,
      seed,
      guidance: wire,
      scene: doc,
      state: "QUEUED",
      error: null,
      imageUrl: null,
    };
    history.push(entry);
    renderHistory();
    const final = await client.waitForJob(jobId, {
      onUpdate: (status) => {
        submitStatus.textContent = `job ${status.state.toLowerCase()}…`;
        history.update(jobId, { state: status.state, error: status.error });
      },
    });
    if (final.state === "DONE") {
      history.update(jobId, { imageUrl: client.imageUrl(jobId) });
      submitStatus.textContent = "done";
    } else {
      submitStatus.textContent = `failed: ${final.error}`;
    }
    renderHistory();
    const updated = history.entries.find((e) => e.jobId === jobId);
    if (updated) showResult(updated);
  } catch (e) {
    submitStatus.textContent =
      e instanceof ServiceError ? e.detail : String(e instanceof Error ? e.message : e);
  } finally {
    inFlight = false;
    refreshSubmitState();
  }
});

// --- scene export / import -------------------------------------------------

el<HTMLButtonElement>("export-scene").addEventListener("click", () => {
  const doc = model.toDocument(true);
  const blob = new Blob([JSON.stringify(doc, null, 2)], { type: "application/json" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = "scene.json";
  a.click();
  URL.revokeObjectURL(a.href);
});

el<HTMLInputElement>("import-scene").addEventListener("change", async (ev) => {
  const file = (ev.target as HTMLInputElement).files?.[0];
  if (!file) return;
  try {
    const imported = fromDocument(JSON.parse(await file.text()));
    if (imported.h !== view.h || imported.w !== view.w) {
      throw new Error(
        `scene canvas ${imported.h}x${imported.w} does not match checkpoint canvas ${view.h}x${view.w}`
      );
    }
    model = imported;
    globalPromptInput.value = model.globalPrompt;
    renderSegmentRows();
    refreshSubmitState();
    repaint();
    hint(`imported ${model.segments.length} segment(s)`);
  } catch (e) {
    hint(`import failed: ${String(e instanceof Error ? e.message : e)}`);
  }
  (ev.target as HTMLInputElement).value = "";
});

// --- bootstrap -------------------------------------------------------------

checkpointSelect.addEventListener("change", () => {
  const info = checkpoints.find((c) => c.id === checkpointSelect.value);
  if (!info) return;
  const [h, w] = info.resolution;
  checkpointInfo.textContent = `${info.space} ${h}×${w} · ${info.representation}`;
  resetSketchState(h, w);
});

async function init(): Promise<void> {
  resetSketchState(view.h, view.w); // paint the default canvas before the service answers
  try {
    await client.health();
    hideBanner();
  } catch {
    showBanner(`service unreachable at ${client.baseUrl} - start it and reload`);
    return;
  }
  try {
    checkpoints = await client.checkpoints();
  } catch (e) {
    showBanner(e instanceof ServiceError ? e.detail : "could not list checkpoints");
    return;
  }
  checkpointSelect.replaceChildren(
    ...checkpoints.map((c) => new Option(`${c.id} (${c.resolution.join("×")})`, c.id))
  );
  if (checkpoints.length === 0) {
    showBanner("service has no checkpoints; train one and reload");
    return;
  }
  checkpointSelect.dispatchEvent(new Event("change"));
}

void init();
