// Pointer traces -> constraint specs at model resolution.
//
// Canvas gestures arrive in display coordinates; everything is downsampled
// to the model's pixel grid on the client so the wire format stays
// resolution-fixed.

import {
  ColorSpec,
  ConstraintSpec,
  MaskJson,
  PointerSample,
  SketchSpec,
  WarpSpec,
} from "./types.js";

export type BrushKind = "color" | "sketch" | "warp";

export interface BrushTool {
  kind: BrushKind;
  color: [number, number, number];
  size: number; // radius in model pixels
}

export function encodeMask(mask: Float32Array, res: number): MaskJson {
  const bytes = new Uint8Array(mask.buffer.slice(0), 0, mask.length * 4);
  let bin = "";
  const chunk = 0x8000;
  for (let i = 0; i < bytes.length; i += chunk) {
    bin += String.fromCharCode(...bytes.subarray(i, Math.min(i + chunk, bytes.length)));
  }
  const b64 =
    typeof btoa === "function" ? btoa(bin) : Buffer.from(bytes).toString("base64");
  return { height: res, width: res, data: b64 };
}

/** Map one display-space sample to integer model coordinates. */
export function toModel(
  p: PointerSample,
  canvasSize: number,
  res: number
): { x: number; y: number } {
  const scale = res / canvasSize;
  return {
    x: Math.min(res - 1, Math.max(0, Math.floor(p.x * scale))),
    y: Math.min(res - 1, Math.max(0, Math.floor(p.y * scale))),
  };
}

function stampDisc(mask: Float32Array, res: number, cx: number, cy: number, r: number) {
  const rr = Math.max(0, r - 1);
  for (let y = cy - rr; y <= cy + rr; y++) {
    for (let x = cx - rr; x <= cx + rr; x++) {
      if (x < 0 || y < 0 || x >= res || y >= res) continue;
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= rr * rr) {
        mask[y * res + x] = 1.0;
      }
    }
  }
}

/** Rasterize a trace into a model-resolution mask; null when it paints nothing. */
export function traceToMask(
  trace: PointerSample[],
  canvasSize: number,
  res: number,
  brushSize: number
): Float32Array | null {
  if (trace.length === 0) return null;
  const mask = new Float32Array(res * res);
  let prev = toModel(trace[0], canvasSize, res);
  stampDisc(mask, res, prev.x, prev.y, brushSize);
  for (const sample of trace.slice(1)) {
    const cur = toModel(sample, canvasSize, res);
    const steps = Math.max(Math.abs(cur.x - prev.x), Math.abs(cur.y - prev.y), 1);
    for (let t = 1; t <= steps; t++) {
      const x = Math.round(prev.x + ((cur.x - prev.x) * t) / steps);
      const y = Math.round(prev.y + ((cur.y - prev.y) * t) / steps);
      stampDisc(mask, res, x, y, brushSize);
    }
    prev = cur;
  }
  let any = false;
  for (let i = 0; i < mask.length; i++) {
    if (mask[i] > 0) {
      any = true;
      break;
    }
  }
  return any ? mask : null;
}

export function colorConstraint(
  trace: PointerSample[],
  tool: BrushTool,
  canvasSize: number,
  res: number
): ColorSpec | null {
  const mask = traceToMask(trace, canvasSize, res, tool.size);
  if (!mask) return null;
  return { kind: "color", color: tool.color, mask: encodeMask(mask, res), weight: 1.0 };
}

export function sketchConstraint(
  trace: PointerSample[],
  tool: BrushTool,
  canvasSize: number,
  res: number
): SketchSpec | null {
  const mask = traceToMask(trace, canvasSize, res, 1);
  if (!mask) return null;
  return { kind: "sketch", mask: encodeMask(mask, res), weight: 1.0 };
}

/**
 * Warp gesture: a rectangle selected on the canvas dragged by a vector.
 * Returns null when the selection or the displaced selection leaves the
 * canvas, or when nothing actually moves.
 */
export function warpConstraint(
  rect: { x: number; y: number; w: number; h: number },
  drag: { dx: number; dy: number },
  canvasSize: number,
  res: number
): WarpSpec | null {
  const scale = res / canvasSize;
  const x = Math.round(rect.x * scale);
  const y = Math.round(rect.y * scale);
  const w = Math.max(1, Math.round(rect.w * scale));
  const h = Math.max(1, Math.round(rect.h * scale));
  const dx = Math.round(drag.dx * scale);
  const dy = Math.round(drag.dy * scale);
  if (dx === 0 && dy === 0) return null;
  if (x < 0 || y < 0 || x + w > res || y + h > res) return null;
  if (x + dx < 0 || y + dy < 0 || x + dx + w > res || y + dy + h > res) return null;
  return { kind: "warp", rect: [y, x, h, w], displacement: [dy, dx], weight: 1.0 };
}

export function strokeToConstraint(
  tool: BrushTool,
  trace: PointerSample[],
  canvasSize: number,
  res: number
): ConstraintSpec | null {
  if (tool.kind === "color") return colorConstraint(trace, tool, canvasSize, res);
  if (tool.kind === "sketch") return sketchConstraint(trace, tool, canvasSize, res);
  return null; // warp uses its own rectangle gesture
}
