/** Canvas document model: background image plus six confidence overlays.
 *
 * All pixel logic lives here, DOM-free, so it is testable headless; app.ts
 * only wires events and blits the RGBA buffers this module produces.
 */

import {
  CHANNEL_COLORS,
  CONFIDENCE_PALETTE,
  NUM_CHANNELS,
  snapToPalette,
} from "./channels.js";
import { encodeCmap } from "./cmap.js";

export interface BrushState {
  channel: number;                 // 0..5
  confidence: number;              // one of CONFIDENCE_PALETTE (paint mode)
  radius: number;                  // pixels
  mode: "paint" | "erase";
  /** Documented escape hatch: allow any 1..100 confidence. Off by default,
   * keeping labels aligned with the experiment's threshold grid. */
  freeSlider: boolean;
}

export interface CanvasDoc {
  imageId: string;
  width: number;
  height: number;
  background: Uint8Array;          // greyscale, width*height
  overlays: Uint8Array[];          // NUM_CHANNELS planes of confidence 0..100
  dirty: boolean;
  revision: number;
}

export interface Point {
  x: number;
  y: number;
}

export function defaultBrush(): BrushState {
  return { channel: 0, confidence: 100, radius: 3, mode: "paint", freeSlider: false };
}

export function setBrushConfidence(brush: BrushState, value: number): void {
  if (brush.freeSlider) {
    brush.confidence = Math.min(100, Math.max(1, Math.round(value)));
  } else {
    brush.confidence = snapToPalette(value);
  }
}

export function createDoc(imageId: string, width: number, height: number,
                          background: Uint8Array): CanvasDoc {
  if (background.length !== width * height) {
    throw new Error(`background has ${background.length} bytes, expected ${width * height}`);
  }
  return {
    imageId,
    width,
    height,
    background,
    overlays: Array.from({ length: NUM_CHANNELS }, () => new Uint8Array(width * height)),
    dirty: false,
    revision: 0,
  };
}

function stamp(doc: CanvasDoc, cx: number, cy: number, radius: number,
               plane: Uint8Array, value: number): void {
  const r2 = radius * radius;
  const x0 = Math.max(0, Math.floor(cx - radius));
  const x1 = Math.min(doc.width - 1, Math.ceil(cx + radius));
  const y0 = Math.max(0, Math.floor(cy - radius));
  const y1 = Math.min(doc.height - 1, Math.ceil(cy + radius));
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const dx = x - cx;
      const dy = y - cy;
      if (dx * dx + dy * dy <= r2) {
        plane[y * doc.width + x] = value;
      }
    }
  }
}

/** Apply one brush stroke along a polyline path. */
export function paintStroke(doc: CanvasDoc, brush: BrushState, path: Point[]): void {
  if (path.length === 0) return;
  const value = brush.mode === "erase" ? 0 : brush.confidence;
  if (value !== 0 && !brush.freeSlider &&
      !(CONFIDENCE_PALETTE as readonly number[]).includes(value)) {
    throw new Error(`brush confidence ${value} off the palette`);
  }
  const plane = doc.overlays[brush.channel];
  let prev = path[0];
  stamp(doc, prev.x, prev.y, brush.radius, plane, value);
  for (let i = 1; i < path.length; i++) {
    const next = path[i];
    const dist = Math.hypot(next.x - prev.x, next.y - prev.y);
    const steps = Math.max(1, Math.ceil(dist));
    for (let s = 1; s <= steps; s++) {
      const t = s / steps;
      stamp(doc, prev.x + (next.x - prev.x) * t, prev.y + (next.y - prev.y) * t,
            brush.radius, plane, value);
    }
    prev = next;
  }
  doc.dirty = true;
}

/** Binary preview masks using the training threshold semantics:
 * foreground iff confidence >= t, or > 0 when t is 0. */
export function thresholdPreview(doc: CanvasDoc, t: number): Uint8Array[] {
  return doc.overlays.map((plane) => {
    const mask = new Uint8Array(plane.length);
    for (let i = 0; i < plane.length; i++) {
      mask[i] = (t === 0 ? plane[i] > 0 : plane[i] >= t) ? 1 : 0;
    }
    return mask;
  });
}

/** Composite the confidence overlays into an RGBA buffer; per-pixel alpha is
 * confidence/100 in the channel's color (confidence as transparency). */
export function renderOverlayRGBA(doc: CanvasDoc,
                                  activeOnly = -1): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(doc.width * doc.height * 4);
  for (let c = 0; c < NUM_CHANNELS; c++) {
    if (activeOnly >= 0 && c !== activeOnly) continue;
    const [r, g, b] = CHANNEL_COLORS[c];
    const plane = doc.overlays[c];
    for (let i = 0; i < plane.length; i++) {
      const conf = plane[i];
      if (conf === 0) continue;
      const alpha = conf / 100;
      const base = i * 4;
      const prevAlpha = out[base + 3] / 255;
      const outAlpha = alpha + prevAlpha * (1 - alpha);
      out[base] = (r * alpha + out[base] * prevAlpha * (1 - alpha)) / outAlpha;
      out[base + 1] = (g * alpha + out[base + 1] * prevAlpha * (1 - alpha)) / outAlpha;
      out[base + 2] = (b * alpha + out[base + 2] * prevAlpha * (1 - alpha)) / outAlpha;
      out[base + 3] = outAlpha * 255;
    }
  }
  return out;
}

/** Render binary preview masks in channel colors, full opacity. */
export function renderPreviewRGBA(doc: CanvasDoc, t: number): Uint8ClampedArray<ArrayBuffer> {
  const masks = thresholdPreview(doc, t);
  const out = new Uint8ClampedArray(doc.width * doc.height * 4);
  for (let c = 0; c < NUM_CHANNELS; c++) {
    const [r, g, b] = CHANNEL_COLORS[c];
    const mask = masks[c];
    for (let i = 0; i < mask.length; i++) {
      if (!mask[i]) continue;
      const base = i * 4;
      out[base] = r;
      out[base + 1] = g;
      out[base + 2] = b;
      out[base + 3] = 255;
    }
  }
  return out;
}

export function serializeDoc(doc: CanvasDoc): Uint8Array {
  return encodeCmap(doc.overlays, doc.width, doc.height);
}
