import { classColor, type Rgb } from "./palette.js";
import { decodeRle, rasterContains } from "./rle.js";
import type { Assignment, MaskSummary } from "./types.js";

export interface OverlayModel {
  maskId: string;
  raster: Uint8Array;
  width: number;
  height: number;
  area: number;
  classIndex: number;
  color: Rgb;
  similarity: number;
  runnerUpGap: number | null;
}

/**
 * Client-side overlay state: each mask decoded once from its RLE, colored by
 * its assigned class, annotated with the winning similarity and the gap to
 * the runner-up.
 */
export function buildOverlays(
  masks: MaskSummary[],
  assignments: Assignment[],
): OverlayModel[] {
  const byId = new Map(assignments.map((entry) => [entry.segment_id, entry]));
  return masks.map((mask) => {
    const assignment = byId.get(mask.id);
    const classIndex = assignment ? assignment.class_index : -1;
    return {
      maskId: mask.id,
      raster: decodeRle(mask.rle),
      width: mask.rle.size[1],
      height: mask.rle.size[0],
      area: mask.area,
      classIndex,
      color: classColor(Math.max(classIndex, 0)),
      similarity: assignment ? assignment.similarity : NaN,
      runnerUpGap:
        assignment && assignment.runner_up
          ? assignment.similarity - assignment.runner_up.similarity
          : null,
    };
  });
}

/**
 * Topmost hit wins: among masks containing the point, pick the smallest area
 * so nested masks stay selectable. Agrees with the decoded raster by
 * construction.
 */
export function hitTest(
  overlays: OverlayModel[],
  x: number,
  y: number,
): OverlayModel | null {
  let best: OverlayModel | null = null;
  for (const overlay of overlays) {
    if (!rasterContains(overlay.raster, overlay.width, x, y)) {
      continue;
    }
    if (best === null || overlay.area < best.area) {
      best = overlay;
    }
  }
  return best;
}

/** Paint overlays onto the canvas; the selected mask gets a stronger fill. */
export function drawOverlays(
  ctx: CanvasRenderingContext2D,
  overlays: OverlayModel[],
  selectedId: string | null,
): void {
  for (const overlay of overlays) {
    const alpha = overlay.maskId === selectedId ? 200 : 110;
    const imageData = ctx.createImageData(overlay.width, overlay.height);
    for (let k = 0; k < overlay.raster.length; k++) {
      if (overlay.raster[k] === 1) {
        const offset = k * 4;
        imageData.data[offset] = overlay.color.r;
        imageData.data[offset + 1] = overlay.color.g;
        imageData.data[offset + 2] = overlay.color.b;
        imageData.data[offset + 3] = alpha;
      }
    }
    const scratch = ctx.canvas.ownerDocument.createElement("canvas");
    scratch.width = overlay.width;
    scratch.height = overlay.height;
    const scratchCtx = scratch.getContext("2d");
    if (!scratchCtx) {
      continue;
    }
    scratchCtx.putImageData(imageData, 0, 0);
    ctx.drawImage(scratch, 0, 0);
  }
}
