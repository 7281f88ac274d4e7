import type { GuidanceWire } from "./schema.js";

/**
 * Form state behind the guidance controls. Both sliders keep their values
 * when the mode toggles, so switching back and forth is lossless; only the
 * active mode's scales are serialized.
 */
export interface GuidanceState {
  mode: "fast" | "multi";
  joint: number;
  global: number;
  scene: number;
}

/** Fast single-direction guidance at s = 3 is the default. */
export function defaultGuidance(): GuidanceState {
  return { mode: "fast", joint: 3, global: 3, scene: 3 };
}

export function toWire(state: GuidanceState): GuidanceWire {
  const check = (name: string, v: number) => {
    if (!Number.isFinite(v) || v < 0) {
      throw new Error(`guidance scale ${name} must be a finite number >= 0`);
    }
  };
  if (state.mode === "fast") {
    check("joint", state.joint);
    return { mode: "fast", scales: { joint: state.joint } };
  }
  check("global", state.global);
  check("scene", state.scene);
  return { mode: "multi", scales: { global: state.global, scene: state.scene } };
}

/**
 * Human label for what a multi-mode configuration does; a zero scene scale
 * means the spatial map contributes nothing and only text steers the image.
 */
export function multiSceneLabel(scene: number): string {
  return scene === 0 ? "text only" : `s_scene = ${scene}`;
}
