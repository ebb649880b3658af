/** Browser glue: canvas-backed PNG decode and blitting. Kept thin and free of
 * session logic so everything above it stays testable under node. */

import { DecodedPng, SessionImage } from "./session.js";

export async function decodePngBrowser(png: Uint8Array): Promise<DecodedPng> {
  // copy into a fresh ArrayBuffer-backed view; Blob rejects SharedArrayBuffer views
  const bitmap = await createImageBitmap(new Blob([new Uint8Array(png)], { type: "image/png" }));
  const canvas = document.createElement("canvas");
  canvas.width = bitmap.width;
  canvas.height = bitmap.height;
  const ctx = canvas.getContext("2d", { willReadFrequently: true })!;
  ctx.drawImage(bitmap, 0, 0);
  bitmap.close();
  const data = ctx.getImageData(0, 0, canvas.width, canvas.height);
  return { width: data.width, height: data.height, rgba: new Uint8Array(data.data.buffer.slice(0)) };
}

export async function fileToSessionImage(file: File): Promise<SessionImage> {
  const bytes = new Uint8Array(await file.arrayBuffer());
  const decoded = await decodePngBrowser(bytes);
  return { blob: file, width: decoded.width, height: decoded.height, rgba: decoded.rgba };
}

/** Draw a flat RGBA buffer into a canvas at native resolution; CSS scales it. */
export function blit(canvas: HTMLCanvasElement, rgba: Uint8Array, width: number, height: number): void {
  canvas.width = width;
  canvas.height = height;
  const ctx = canvas.getContext("2d")!;
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), width, height), 0, 0);
}
