/** Single-page prompt studio: upload an image, iterate on text prompts against
 * the segmentation service, inspect and compare the returned masks. The page
 * holds no model math; every mask comes from the service and is only restyled
 * client-side (overlay tint, re-threshold, agreement map). */

import { SegmentClient } from "./api.js";
import { agreement, agreementRgba, foregroundCount, overlayRgba } from "./masks.js";
import { HistoryEntry, PromptSession, ValidationError } from "./session.js";
import { blit, decodePngBrowser, fileToSessionImage } from "./dom.js";

const DEFAULT_BASE = localStorage.getItem("tmca-api-base") ?? "http://127.0.0.1:8000";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const apiBaseInput = el<HTMLInputElement>("api-base");
const apiApply = el<HTMLButtonElement>("api-apply");
const apiStatus = el<HTMLSpanElement>("api-status");
const fileInput = el<HTMLInputElement>("file");
const promptInput = el<HTMLTextAreaElement>("prompt");
const thresholdInput = el<HTMLInputElement>("threshold");
const submitBtn = el<HTMLButtonElement>("submit");
const busyNote = el<HTMLSpanElement>("busy");
const errorBanner = el<HTMLDivElement>("error-banner");
const historyList = el<HTMLUListElement>("history");
const overlayCanvas = el<HTMLCanvasElement>("overlay-canvas");
const alphaSlider = el<HTMLInputElement>("alpha");
const viewThreshold = el<HTMLInputElement>("view-threshold");
const viewNote = el<HTMLSpanElement>("view-note");
const cmpA = el<HTMLSelectElement>("cmp-a");
const cmpB = el<HTMLSelectElement>("cmp-b");
const cmpCanvasA = el<HTMLCanvasElement>("cmp-canvas-a");
const cmpCanvasB = el<HTMLCanvasElement>("cmp-canvas-b");
const cmpMap = el<HTMLCanvasElement>("cmp-map");
const cmpStats = el<HTMLSpanElement>("cmp-stats");

const client = new SegmentClient(DEFAULT_BASE);
let session = new PromptSession(client, decodePngBrowser);
let selectedId: number | null = null;
let detachSession = session.onChange(render);

apiBaseInput.value = DEFAULT_BASE;

async function checkHealth(): Promise<void> {
  apiStatus.textContent = "checking...";
  apiStatus.className = "status";
  try {
    const h = await client.health();
    apiStatus.textContent = `ok (${h.model_fingerprint.slice(0, 8)})`;
    apiStatus.className = "status ok";
  } catch (err) {
    apiStatus.textContent = err instanceof Error ? err.message : String(err);
    apiStatus.className = "status bad";
  }
}

apiApply.addEventListener("click", () => {
  client.setBaseUrl(apiBaseInput.value.trim());
  localStorage.setItem("tmca-api-base", client.baseUrl);
  void checkHealth();
});

fileInput.addEventListener("change", async () => {
  const file = fileInput.files?.[0];
  if (!file) return;
  try {
    const image = await fileToSessionImage(file);
    // one session per image: swap in a fresh history
    detachSession();
    session = new PromptSession(client, decodePngBrowser);
    detachSession = session.onChange(render);
    session.setImage(image);
    selectedId = null;
    showError(null);
    render();
  } catch (err) {
    showError(`could not read image: ${err instanceof Error ? err.message : String(err)}`);
  }
});

submitBtn.addEventListener("click", () => {
  const threshold = Number(thresholdInput.value);
  let pending: Promise<HistoryEntry>;
  try {
    pending = session.submitPrompt(promptInput.value, threshold);
  } catch (err) {
    if (err instanceof ValidationError) {
      showError(err.message);
      return;
    }
    throw err;
  }
  showError(null);
  pending
    .then((entry) => {
      selectedId = entry.id;
      viewThreshold.value = String(entry.threshold);
      render();
    })
    .catch((err: unknown) => {
      // history is untouched; surface the failure inline and move on
      showError(err instanceof Error ? err.message : String(err));
    });
});

alphaSlider.addEventListener("input", renderOverlay);
viewThreshold.addEventListener("input", renderOverlay);
cmpA.addEventListener("change", renderCompare);
cmpB.addEventListener("change", renderCompare);

function showError(message: string | null): void {
  if (message === null) {
    errorBanner.hidden = true;
    errorBanner.textContent = "";
  } else {
    errorBanner.hidden = false;
    errorBanner.textContent = message;
  }
}

function entryLabel(e: HistoryEntry): string {
  const fg = foregroundCount(e.mask);
  return `#${e.id} "${e.text}" thr=${e.threshold} fg=${fg}px ${e.latencyMs.toFixed(0)}ms`;
}

function render(): void {
  busyNote.textContent = session.pending > 0 ? `${session.pending} request(s) queued` : "";
  if (session.lastError) showError(session.lastError);

  historyList.replaceChildren(
    ...session.history.map((e) => {
      const li = document.createElement("li");
      li.textContent = entryLabel(e);
      li.className = e.id === selectedId ? "selected" : "";
      li.addEventListener("click", () => {
        selectedId = e.id;
        viewThreshold.value = String(e.threshold);
        render();
      });
      return li;
    }),
  );

  const keep = new Set([cmpA.value, cmpB.value]);
  for (const select of [cmpA, cmpB]) {
    select.replaceChildren(
      ...session.history.map((e) => {
        const opt = document.createElement("option");
        opt.value = String(e.id);
        opt.textContent = `#${e.id} ${e.text}`;
        return opt;
      }),
    );
  }
  if (keep.size) {
    cmpA.value = [...keep][0] ?? cmpA.value;
    if (keep.size > 1) cmpB.value = [...keep][1] ?? cmpB.value;
  }

  renderOverlay();
  renderCompare();
}

function renderOverlay(): void {
  const image = session.image;
  if (!image) return;
  const entry = selectedId === null ? undefined : session.entryById(selectedId);
  if (!entry) {
    blit(overlayCanvas, image.rgba, image.width, image.height);
    return;
  }
  const threshold = Number(viewThreshold.value);
  const mask = session.maskAt(entry, threshold);
  const alpha = Number(alphaSlider.value);
  blit(overlayCanvas, overlayRgba(image.rgba, mask, alpha), image.width, image.height);
  viewNote.textContent =
    entry.probabilities === null
      ? "binary mask only (no probability map stored)"
      : threshold === entry.threshold
        ? `service mask at threshold ${entry.threshold}`
        : `re-thresholded client-side at ${threshold.toFixed(2)}`;
}

function renderCompare(): void {
  const image = session.image;
  if (!image) return;
  const a = session.entryById(Number(cmpA.value));
  const b = session.entryById(Number(cmpB.value));
  if (!a || !b) {
    cmpStats.textContent = "";
    return;
  }
  session.setComparison(a.id, b.id);
  const alpha = Number(alphaSlider.value);
  blit(cmpCanvasA, overlayRgba(image.rgba, a.mask, alpha), image.width, image.height);
  blit(cmpCanvasB, overlayRgba(image.rgba, b.mask, alpha), image.width, image.height);
  blit(cmpMap, agreementRgba(image.rgba, a.mask, b.mask), image.width, image.height);
  const stats = agreement(a.mask, b.mask);
  cmpStats.textContent =
    `agreement ${stats.agreementPercent.toFixed(2)}% | ` +
    `both ${stats.both} | only #${a.id} ${stats.onlyA} | only #${b.id} ${stats.onlyB}`;
}

void checkHealth();
render();
