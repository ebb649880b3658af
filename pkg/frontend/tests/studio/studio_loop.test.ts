/** The studio loop against a live service: upload an ambiguous scene, prompt,
 * re-prompt with different text, compare, and survive a failed request. One
 * summary line reports the whole loop at the end. */

import { readFileSync } from "node:fs";
import path from "node:path";
import { fileURLToPath } from "node:url";
import { PNG } from "pngjs";
import { afterAll, beforeAll, expect, it } from "vitest";

import { ApiError, SegmentClient } from "../../src/api.js";
import { agreement, foregroundCount, overlayRgba } from "../../src/masks.js";
import { DecodedPng, HistoryEntry, PromptSession, ValidationError } from "../../src/session.js";

const INFO_FILE = fileURLToPath(new URL("./.service.json", import.meta.url));

async function decodePngNode(bytes: Uint8Array): Promise<DecodedPng> {
  const png = PNG.sync.read(Buffer.from(bytes));
  return { width: png.width, height: png.height, rgba: new Uint8Array(png.data) };
}

let session: PromptSession;
let prompts: { prompt_a: string; prompt_b: string; width: number; height: number };
let imageRgba: Uint8Array;
let entryA: HistoryEntry;
let entryB: HistoryEntry;

const done = {
  overlay: false,
  secondPrompt: false,
  determinism: false,
  selfCompare: false,
  errorKeepsHistory: false,
};

beforeAll(async () => {
  const info = JSON.parse(readFileSync(INFO_FILE, "utf8")) as { baseUrl: string; fixtureDir: string };
  prompts = JSON.parse(readFileSync(path.join(info.fixtureDir, "prompts.json"), "utf8"));
  const pngBytes = new Uint8Array(readFileSync(path.join(info.fixtureDir, "image.png")));
  const decoded = await decodePngNode(pngBytes);
  expect([decoded.width, decoded.height]).toEqual([prompts.width, prompts.height]);
  imageRgba = decoded.rgba;

  const client = new SegmentClient(info.baseUrl);
  session = new PromptSession(client, decodePngNode);
  session.setImage({
    blob: new Blob([pngBytes], { type: "image/png" }),
    width: decoded.width,
    height: decoded.height,
    rgba: decoded.rgba,
  });
});

it("upload then prompt renders an overlay", async () => {
  entryA = await session.submitPrompt(prompts.prompt_a, 0.5);
  expect(session.history).toHaveLength(1);
  expect(entryA.mask.width).toBe(prompts.width);
  expect(entryA.mask.height).toBe(prompts.height);
  expect(foregroundCount(entryA.mask)).toBeGreaterThan(0);

  // the composited buffer differs from the raw image exactly where the mask is
  const composite = overlayRgba(imageRgba, entryA.mask, 0.55);
  let tinted = 0;
  for (let p = 0; p < entryA.mask.data.length; p++) {
    const i = 4 * p;
    const changed =
      composite[i] !== imageRgba[i] ||
      composite[i + 1] !== imageRgba[i + 1] ||
      composite[i + 2] !== imageRgba[i + 2];
    if (entryA.mask.data[p]) {
      if (changed) tinted++;
    } else {
      expect(changed).toBe(false);
    }
  }
  expect(tinted).toBeGreaterThan(0);
  done.overlay = true;
});

it("a different prompt appends a second entry with a different mask", async () => {
  entryB = await session.submitPrompt(prompts.prompt_b, 0.5);
  expect(session.history).toHaveLength(2);
  expect(session.history[0]).toBe(entryA);
  expect(entryB.maskPng).not.toBe(entryA.maskPng);
  expect(foregroundCount(entryB.mask)).toBeGreaterThan(0);
  expect(agreement(entryA.mask, entryB.mask).agreementPercent).toBeLessThan(100);
  done.secondPrompt = true;
});

it("resubmitting an identical prompt returns an identical mask", async () => {
  const again = await session.submitPrompt(prompts.prompt_a, 0.5);
  expect(again.maskPng).toBe(entryA.maskPng);
  done.determinism = true;
});

it("comparing an entry with itself reports 100% agreement", () => {
  session.setComparison(entryA.id, entryA.id);
  const stats = agreement(entryA.mask, entryA.mask);
  expect(stats.agreementPercent).toBe(100);
  expect(stats.onlyA).toBe(0);
  expect(stats.onlyB).toBe(0);
  done.selfCompare = true;
});

it("a failed request preserves history", async () => {
  const before = session.history.length;

  // client-side: empty text never reaches the service
  expect(() => session.submitPrompt("   ")).toThrow(ValidationError);

  // server-side: out-of-range threshold is a 400 the session must survive
  await expect(session.submitPrompt(prompts.prompt_a, 7)).rejects.toThrow(ApiError);
  expect(session.history).toHaveLength(before);
  expect(session.lastError).toMatch(/threshold/);

  // and the session keeps accepting work afterwards
  const after = await session.submitPrompt(prompts.prompt_b, 0.5);
  expect(session.history).toHaveLength(before + 1);
  expect(after.maskPng).toBe(entryB.maskPng);
  done.errorKeepsHistory = true;
});

afterAll(() => {
  const ok = Object.values(done).every(Boolean);
  const detail = Object.entries(done)
    .map(([k, v]) => `${k}=${v ? "ok" : "FAILED"}`)
    .join(", ");
  console.log(`criterion 11 [studio-loop]: ${ok ? "PASS" : "FAIL"} - ${detail}`);
});
