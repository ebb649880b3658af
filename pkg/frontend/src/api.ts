/** Typed client for the segmentation service. Transport only: request shaping,
 * error mapping, and the base-URL switch live here; validation rules and
 * session bookkeeping stay in session.ts. */

export type HealthResponse = {
  status: string;
  model_fingerprint: string;
};

export type ModelSummary = {
  image_size: number;
  in_channels: number;
  widths: number[];
  text_dim: number;
  levels: string[];
  temperatures: { target: number; logit: number; attention: number };
  vocab_size: number;
  max_len: number;
  model_fingerprint: string;
};

export type SegmentResponse = {
  /** base64 PNG, grayscale 0/255 */
  mask: string;
  /** base64 PNG of 0..255 probabilities; present when requested */
  probabilities?: string;
  probabilities_available: boolean;
  dice_vs_reference: number | null;
  latency_ms: number;
  model_fingerprint: string;
  /** [height, width] of the returned mask (equals the uploaded image) */
  shape: [number, number];
  threshold: number;
};

/** Non-2xx response from the service, with the parsed detail string. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`service responded ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

async function errorDetail(res: Response): Promise<string> {
  const body = await res.text();
  try {
    const parsed = JSON.parse(body);
    if (parsed && typeof parsed.detail === "string") return parsed.detail;
    if (parsed && parsed.detail !== undefined) return JSON.stringify(parsed.detail);
  } catch {
    /* not JSON */
  }
  return body || res.statusText || "request failed";
}

export class SegmentClient {
  private base: string;

  constructor(baseUrl: string) {
    this.base = SegmentClient.normalize(baseUrl);
  }

  /** Strip trailing slashes so path joins are predictable. */
  static normalize(url: string): string {
    return url.replace(/\/+$/, "");
  }

  get baseUrl(): string {
    return this.base;
  }

  /** Point the client at a different service at runtime. */
  setBaseUrl(url: string): void {
    this.base = SegmentClient.normalize(url);
  }

  private async getJson<T>(path: string): Promise<T> {
    const res = await fetch(`${this.base}${path}`);
    if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
    return (await res.json()) as T;
  }

  health(): Promise<HealthResponse> {
    return this.getJson<HealthResponse>("/api/v1/health");
  }

  model(): Promise<ModelSummary> {
    return this.getJson<ModelSummary>("/api/v1/model");
  }

  /** POST one prompt against one image. Always asks for the probability map
   * so the UI can re-threshold client-side without another request. */
  async segment(image: Blob, text: string, threshold: number, wantProbs = true): Promise<SegmentResponse> {
    const form = new FormData();
    form.append("image", image, "image.png");
    form.append("text", text);
    form.append("threshold", String(threshold));
    form.append("probs", wantProbs ? "true" : "false");
    const res = await fetch(`${this.base}/api/v1/segment`, { method: "POST", body: form });
    if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
    return (await res.json()) as SegmentResponse;
  }
}
