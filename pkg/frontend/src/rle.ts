import type { RlePayload } from "./types.js";

/**
 * Decode the engine's run-length payload into a row-major 0/1 raster.
 *
 * Counts alternate background/foreground runs in COLUMN-major pixel order,
 * starting with a (possibly zero) background run. The engine is the single
 * source of truth for mask geometry; the client only rasterizes.
 */
export function decodeRle(rle: RlePayload): Uint8Array {
  const [height, width] = rle.size;
  const total = height * width;
  let sum = 0;
  for (const count of rle.counts) {
    if (count < 0) {
      throw new Error("run counts must be non-negative");
    }
    sum += count;
  }
  if (sum !== total) {
    throw new Error(`run counts sum to ${sum}, expected ${total}`);
  }
  const raster = new Uint8Array(total);
  let flat = 0; // index in column-major order
  let value = 0;
  for (const count of rle.counts) {
    if (value === 1) {
      for (let k = 0; k < count; k++) {
        const index = flat + k;
        const row = index % height;
        const col = (index - row) / height;
        raster[row * width + col] = 1;
      }
    }
    flat += count;
    value = 1 - value;
  }
  return raster;
}

/** True when the raster covers image coordinates (x, y). */
export function rasterContains(
  raster: Uint8Array,
  width: number,
  x: number,
  y: number,
): boolean {
  const col = Math.floor(x);
  const row = Math.floor(y);
  if (col < 0 || row < 0 || col >= width || row * width + col >= raster.length) {
    return false;
  }
  return raster[row * width + col] === 1;
}
