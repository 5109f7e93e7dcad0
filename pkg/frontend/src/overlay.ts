/** Overlay compositing: server PNG + layout JSON, drawn on a canvas.
 *
 * All geometry comes from the layout response; the client only transforms
 * coordinates between canvas space and image space and filters markers by
 * the user's visibility toggles.
 */

import type { OverlayLayoutJson, RectJson } from "./types";

export interface PatternMarker {
  patternId: string;
  group: string;
  x: number;
  y: number;
  contribution: number;
}

export interface OverlayRenderModel {
  widthPx: number;
  heightPx: number;
  partBox: RectJson;
  markers: PatternMarker[];
}

export function buildRenderModel(
  layout: OverlayLayoutJson,
  hiddenPatterns: ReadonlySet<string>,
): OverlayRenderModel {
  const markers: PatternMarker[] = [];
  for (const group of layout.groups) {
    for (const p of group.patterns) {
      if (hiddenPatterns.has(p.pattern_id)) continue;
      markers.push({
        patternId: p.pattern_id,
        group: group.group_id,
        x: p.peak_px[0],
        y: p.peak_px[1],
        contribution: p.contribution,
      });
    }
  }
  return {
    widthPx: layout.width_px,
    heightPx: layout.height_px,
    partBox: layout.part_box,
    markers,
  };
}

/** Rectangle from two drag corners, tolerant of any drag direction. */
export function normalizeDraftRect(x0: number, y0: number, x1: number, y1: number): RectJson {
  return {
    x: Math.min(x0, x1),
    y: Math.min(y0, y1),
    w: Math.abs(x1 - x0),
    h: Math.abs(y1 - y0),
  };
}

/** Clip a draft rectangle to the image so the server never rejects it. */
export function clipToImage(rect: RectJson, widthPx: number, heightPx: number): RectJson {
  const x0 = Math.min(Math.max(rect.x, 0), widthPx);
  const y0 = Math.min(Math.max(rect.y, 0), heightPx);
  const x1 = Math.min(Math.max(rect.x + rect.w, 0), widthPx);
  const y1 = Math.min(Math.max(rect.y + rect.h, 0), heightPx);
  return { x: x0, y: y0, w: x1 - x0, h: y1 - y0 };
}

export function canvasPointToImage(
  canvas: { left: number; top: number; scale: number },
  clientX: number,
  clientY: number,
): { x: number; y: number } {
  return { x: (clientX - canvas.left) / canvas.scale, y: (clientY - canvas.top) / canvas.scale };
}

const PART_BOX_COLOR = "#00e676";
const DRAFT_COLOR = "#ff5252";
const MARKER_COLOR = "#ffd740";

export function drawOverlay(
  ctx: CanvasRenderingContext2D,
  heatImage: CanvasImageSource | null,
  model: OverlayRenderModel,
  drafts: RectJson[],
  scale: number,
): void {
  ctx.clearRect(0, 0, model.widthPx * scale, model.heightPx * scale);
  ctx.save();
  ctx.scale(scale, scale);
  ctx.fillStyle = "#101418";
  ctx.fillRect(0, 0, model.widthPx, model.heightPx);
  if (heatImage !== null) {
    ctx.globalAlpha = 0.95;
    ctx.drawImage(heatImage, 0, 0, model.widthPx, model.heightPx);
    ctx.globalAlpha = 1.0;
  }
  ctx.lineWidth = 2 / scale;

  ctx.strokeStyle = PART_BOX_COLOR;
  ctx.strokeRect(model.partBox.x, model.partBox.y, model.partBox.w, model.partBox.h);

  for (const marker of model.markers) {
    ctx.strokeStyle = MARKER_COLOR;
    ctx.beginPath();
    ctx.arc(marker.x, marker.y, 4 / scale, 0, Math.PI * 2);
    ctx.stroke();
  }

  ctx.strokeStyle = DRAFT_COLOR;
  ctx.setLineDash([6 / scale, 4 / scale]);
  for (const rect of drafts) {
    ctx.strokeRect(rect.x, rect.y, rect.w, rect.h);
  }
  ctx.setLineDash([]);
  ctx.restore();
}
