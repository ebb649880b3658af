/** Prompt session state: one image, an append-only history of prompt results,
 * and a client-side FIFO so at most one segmentation request is in flight.
 *
 * All mask math comes back from the service; the session only decodes,
 * validates dimensions, and records. A failed request rejects that one
 * submission and leaves every prior entry untouched. */

import { ApiError, SegmentClient } from "./api.js";
import { BinaryMask, maskFromRgba, probsFromRgba, thresholdProbs } from "./masks.js";

/** The one service call the session needs; SegmentClient satisfies this. */
export type SegmentTransport = Pick<SegmentClient, "segment">;

export type DecodedPng = {
  width: number;
  height: number;
  /** RGBA, 4 bytes per pixel */
  rgba: Uint8Array;
};

/** PNG decoding differs between browser (canvas) and node (pngjs in tests),
 * so the session takes it as a dependency. */
export type PngDecoder = (png: Uint8Array) => Promise<DecodedPng>;

export type SessionImage = {
  /** encoded bytes as uploaded; forwarded verbatim to the service */
  blob: Blob;
  width: number;
  height: number;
  /** decoded RGBA for overlay rendering */
  rgba: Uint8Array;
};

export type HistoryEntry = {
  id: number;
  text: string;
  threshold: number;
  mask: BinaryMask;
  /** base64 PNG exactly as returned; byte-equal strings mean byte-equal masks */
  maskPng: string;
  /** 0..255 probability bytes when the service sent them, else null */
  probabilities: Uint8Array | null;
  latencyMs: number;
  timestamp: number;
  fingerprint: string;
};

export class ValidationError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ValidationError";
  }
}

export function b64ToBytes(b64: string): Uint8Array {
  const bin = atob(b64);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

export class PromptSession {
  private readonly entries: HistoryEntry[] = [];
  private image_: SessionImage | null = null;
  private nextId = 1;
  private pending_ = 0;
  private chain: Promise<void> = Promise.resolve();
  private lastError_: string | null = null;
  private comparison_: [number, number] | null = null;
  private listeners = new Set<() => void>();

  constructor(
    private readonly client: SegmentTransport,
    private readonly decodePng: PngDecoder,
  ) {}

  get image(): SessionImage | null {
    return this.image_;
  }

  get history(): readonly HistoryEntry[] {
    return this.entries;
  }

  /** queued plus in-flight submissions */
  get pending(): number {
    return this.pending_;
  }

  get lastError(): string | null {
    return this.lastError_;
  }

  get comparison(): [number, number] | null {
    return this.comparison_;
  }

  onChange(fn: () => void): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  /** Sessions are per-image: once prompts exist the image is fixed, so every
   * history entry keeps matching what is on screen. */
  setImage(image: SessionImage): void {
    if (this.entries.length > 0) {
      throw new ValidationError("history is not empty; start a new session for a new image");
    }
    this.image_ = image;
    this.emit();
  }

  entryById(id: number): HistoryEntry | undefined {
    return this.entries.find((e) => e.id === id);
  }

  /** Mask to display for an entry at the slider's threshold: re-thresholded
   * client-side from the stored probability map when available, otherwise the
   * mask the service returned. No request is made either way. */
  maskAt(entry: HistoryEntry, threshold: number): BinaryMask {
    if (entry.probabilities === null || threshold === entry.threshold) return entry.mask;
    return thresholdProbs(entry.probabilities, entry.mask.width, entry.mask.height, threshold);
  }

  setComparison(idA: number, idB: number): void {
    if (!this.entryById(idA) || !this.entryById(idB)) {
      throw new ValidationError(`comparison ids not in history: ${idA}, ${idB}`);
    }
    this.comparison_ = [idA, idB];
    this.emit();
  }

  clearComparison(): void {
    this.comparison_ = null;
    this.emit();
  }

  /** Queue one prompt. Resolves with the appended entry; rejects on service
   * or decode failure with history left exactly as it was. Submissions run
   * strictly one at a time in arrival order. */
  submitPrompt(text: string, threshold = 0.5): Promise<HistoryEntry> {
    if (this.image_ === null) throw new ValidationError("no image loaded");
    if (!text.trim()) throw new ValidationError("prompt text is empty");
    const image = this.image_;

    const task = () => this.runSubmit(image, text, threshold);
    this.pending_ += 1;
    this.emit();
    const result = this.chain.then(task, task);
    this.chain = result.then(
      () => undefined,
      () => undefined,
    );
    return result.finally(() => {
      this.pending_ -= 1;
      this.emit();
    });
  }

  private async runSubmit(image: SessionImage, text: string, threshold: number): Promise<HistoryEntry> {
    try {
      const res = await this.client.segment(image.blob, text, threshold, true);
      const decoded = await this.decodePng(b64ToBytes(res.mask));
      if (decoded.width !== image.width || decoded.height !== image.height) {
        throw new ValidationError(
          `mask ${decoded.width}x${decoded.height} does not match image ${image.width}x${image.height}`,
        );
      }
      const mask = maskFromRgba(decoded.rgba, decoded.width, decoded.height);
      let probabilities: Uint8Array | null = null;
      if (res.probabilities) {
        const dp = await this.decodePng(b64ToBytes(res.probabilities));
        probabilities = probsFromRgba(dp.rgba, dp.width, dp.height);
      }
      const entry: HistoryEntry = {
        id: this.nextId++,
        text,
        threshold,
        mask,
        maskPng: res.mask,
        probabilities,
        latencyMs: res.latency_ms,
        timestamp: Date.now(),
        fingerprint: res.model_fingerprint,
      };
      this.entries.push(entry);
      this.lastError_ = null;
      this.emit();
      return entry;
    } catch (err) {
      this.lastError_ = err instanceof ApiError ? err.message : err instanceof Error ? err.message : String(err);
      this.emit();
      throw err;
    }
  }
}
