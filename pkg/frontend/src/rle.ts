/**
 * Row-major run-length encoding for binary masks.
 *
 * The wire format is comma-separated base-10 run lengths alternating between
 * 0-runs and 1-runs, always starting with a 0-run (which may have length 0).
 * This matches the generation service's scene schema byte for byte, so a mask
 * encoded here can be compared against the server's encoding with `===`.
 */

/** Binary mask stored row-major as 0/1 bytes, length h * w. */
export type Mask = Uint8Array;

export function emptyMask(h: number, w: number): Mask {
  return new Uint8Array(h * w);
}

export function encodeRle(mask: Mask): string {
  const runs: number[] = [];
  let current = 0; // encoding starts with a 0-run
  let run = 0;
  for (let i = 0; i < mask.length; i++) {
    const v = mask[i] ? 1 : 0;
    if (v === current) {
      run += 1;
    } else {
      runs.push(run);
      current = 1 - current;
      run = 1;
    }
  }
  runs.push(run);
  return runs.join(",");
}

export function decodeRle(rle: string, h: number, w: number): Mask {
  const runs = rle.split(",").map((tok) => {
    const n = Number(tok);
    if (!Number.isInteger(n)) throw new Error(`malformed RLE: ${JSON.stringify(tok)}`);
    if (n < 0) throw new Error("malformed RLE: negative run length");
    return n;
  });
  const total = runs.reduce((a, b) => a + b, 0);
  if (total !== h * w) {
    throw new Error(`RLE length ${total} does not cover canvas of ${h * w} pixels`);
  }
  const flat = new Uint8Array(h * w);
  let pos = 0;
  let value = 0;
  for (const r of runs) {
    if (value) flat.fill(1, pos, pos + r);
    pos += r;
    value = 1 - value;
  }
  return flat;
}

export function maskArea(mask: Mask): number {
  let n = 0;
  for (let i = 0; i < mask.length; i++) if (mask[i]) n += 1;
  return n;
}

/** Pixels set in both masks, or null when disjoint. */
export function maskIntersection(a: Mask, b: Mask): Mask | null {
  const out = new Uint8Array(a.length);
  let any = false;
  for (let i = 0; i < a.length; i++) {
    if (a[i] && b[i]) {
      out[i] = 1;
      any = true;
    }
  }
  return any ? out : null;
}

export function maskUnionInto(target: Mask, add: Mask): void {
  for (let i = 0; i < add.length; i++) if (add[i]) target[i] = 1;
}
