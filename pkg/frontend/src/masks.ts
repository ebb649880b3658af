/** Pure pixel math shared by the overlay and compare views. Everything here
 * operates on flat RGBA or per-pixel byte buffers so it runs identically in
 * the browser (ImageData.data) and under node tests; no canvas, no DOM.
 *
 * The studio never computes segmentation itself. These helpers only restyle
 * what the service returned: binarize, re-threshold a probability map, tint,
 * and count agreement between two already-computed masks. */

export type BinaryMask = {
  width: number;
  height: number;
  /** one byte per pixel, 0 = background, 1 = foreground */
  data: Uint8Array;
};

export type AgreementCounts = {
  both: number;
  onlyA: number;
  onlyB: number;
  neither: number;
  total: number;
  /** pixels where the two masks agree (both fg or both bg), in percent */
  agreementPercent: number;
};

export type Rgb = [number, number, number];

export const MASK_TINT: Rgb = [66, 133, 244];
export const BOTH_TINT: Rgb = [52, 168, 83];
export const ONLY_A_TINT: Rgb = [66, 133, 244];
export const ONLY_B_TINT: Rgb = [244, 160, 0];

function expectLength(name: string, got: number, want: number): void {
  if (got !== want) throw new Error(`${name}: expected length ${want}, got ${got}`);
}

function expectSameShape(a: BinaryMask, b: BinaryMask): void {
  if (a.width !== b.width || a.height !== b.height) {
    throw new Error(`mask shapes differ: ${a.width}x${a.height} vs ${b.width}x${b.height}`);
  }
}

/** Binarize a decoded grayscale-as-RGBA buffer (the service's 0/255 mask PNG).
 * Only the red channel is read; the PNGs are single-channel at source. */
export function maskFromRgba(rgba: Uint8Array | Uint8ClampedArray, width: number, height: number): BinaryMask {
  expectLength("rgba", rgba.length, width * height * 4);
  const data = new Uint8Array(width * height);
  for (let p = 0, i = 0; p < data.length; p++, i += 4) {
    data[p] = rgba[i]! > 127 ? 1 : 0;
  }
  return { width, height, data };
}

/** Extract the 0..255 probability bytes from a decoded probability PNG. */
export function probsFromRgba(rgba: Uint8Array | Uint8ClampedArray, width: number, height: number): Uint8Array {
  expectLength("rgba", rgba.length, width * height * 4);
  const out = new Uint8Array(width * height);
  for (let p = 0, i = 0; p < out.length; p++, i += 4) {
    out[p] = rgba[i]!;
  }
  return out;
}

/** Re-threshold a probability map client-side. Mirrors the service rule
 * (probability >= threshold) with probabilities quantized to p/255. */
export function thresholdProbs(probs: Uint8Array, width: number, height: number, threshold: number): BinaryMask {
  expectLength("probs", probs.length, width * height);
  if (!(threshold >= 0 && threshold <= 1)) throw new Error(`threshold outside [0, 1]: ${threshold}`);
  const data = new Uint8Array(probs.length);
  for (let p = 0; p < probs.length; p++) {
    data[p] = probs[p]! / 255 >= threshold ? 1 : 0;
  }
  return { width, height, data };
}

export function foregroundCount(mask: BinaryMask): number {
  let n = 0;
  for (let p = 0; p < mask.data.length; p++) n += mask.data[p]!;
  return n;
}

/** Per-pixel agreement between two masks of identical shape. */
export function agreement(a: BinaryMask, b: BinaryMask): AgreementCounts {
  expectSameShape(a, b);
  let both = 0;
  let onlyA = 0;
  let onlyB = 0;
  for (let p = 0; p < a.data.length; p++) {
    const av = a.data[p]!;
    const bv = b.data[p]!;
    if (av && bv) both++;
    else if (av) onlyA++;
    else if (bv) onlyB++;
  }
  const total = a.data.length;
  const neither = total - both - onlyA - onlyB;
  return {
    both,
    onlyA,
    onlyB,
    neither,
    total,
    agreementPercent: (100 * (both + neither)) / total,
  };
}

/** Composite a tinted mask over an image. alpha=0 returns the image bytes
 * unchanged; background pixels are never touched, so an all-zero mask leaves
 * no tint anywhere. Returns a new RGBA buffer. */
export function overlayRgba(
  imageRgba: Uint8Array | Uint8ClampedArray,
  mask: BinaryMask,
  alpha: number,
  tint: Rgb = MASK_TINT,
): Uint8Array {
  expectLength("imageRgba", imageRgba.length, mask.width * mask.height * 4);
  if (!(alpha >= 0 && alpha <= 1)) throw new Error(`alpha outside [0, 1]: ${alpha}`);
  const out = new Uint8Array(imageRgba);
  for (let p = 0, i = 0; p < mask.data.length; p++, i += 4) {
    if (!mask.data[p]) continue;
    out[i] = Math.round((1 - alpha) * out[i]! + alpha * tint[0]);
    out[i + 1] = Math.round((1 - alpha) * out[i + 1]! + alpha * tint[1]);
    out[i + 2] = Math.round((1 - alpha) * out[i + 2]! + alpha * tint[2]);
    out[i + 3] = 255;
  }
  return out;
}

/** Render the compare view's agreement map over the image: green where both
 * masks mark a pixel, blue where only A does, orange where only B does. */
export function agreementRgba(
  imageRgba: Uint8Array | Uint8ClampedArray,
  a: BinaryMask,
  b: BinaryMask,
  alpha = 0.6,
): Uint8Array {
  expectSameShape(a, b);
  expectLength("imageRgba", imageRgba.length, a.width * a.height * 4);
  const out = new Uint8Array(imageRgba);
  for (let p = 0, i = 0; p < a.data.length; p++, i += 4) {
    const av = a.data[p]!;
    const bv = b.data[p]!;
    if (!av && !bv) continue;
    const tint = av && bv ? BOTH_TINT : av ? ONLY_A_TINT : ONLY_B_TINT;
    out[i] = Math.round((1 - alpha) * out[i]! + alpha * tint[0]);
    out[i + 1] = Math.round((1 - alpha) * out[i + 1]! + alpha * tint[1]);
    out[i + 2] = Math.round((1 - alpha) * out[i + 2]! + alpha * tint[2]);
    out[i + 3] = 255;
  }
  return out;
}
