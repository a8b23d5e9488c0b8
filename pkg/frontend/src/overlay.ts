/** Pixel compositors and keypoint-marker geometry for the overlay canvas.
 * Compositors operate on RGBA buffers so they are testable without a DOM. */

import { OverlayMode } from "./state.js";

/** Composites fixed (a) and warped-moving (b) RGBA buffers in place into out. */
export function composite(
  mode: OverlayMode,
  a: Uint8ClampedArray,
  b: Uint8ClampedArray,
  out: Uint8ClampedArray,
  width: number,
  height: number,
  tile = 8,
  alpha = 0.5,
): void {
  if (a.length !== b.length || a.length !== out.length || a.length !== width * height * 4) {
    throw new Error("compositor buffer sizes disagree");
  }
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const i = (y * width + x) * 4;
      if (mode === "checkerboard") {
        const src = (Math.floor(x / tile) + Math.floor(y / tile)) % 2 === 0 ? a : b;
        out[i] = src[i];
        out[i + 1] = src[i + 1];
        out[i + 2] = src[i + 2];
      } else if (mode === "blend") {
        for (let c = 0; c < 3; c++) {
          out[i + c] = (1 - alpha) * a[i + c] + alpha * b[i + c];
        }
      } else {
        for (let c = 0; c < 3; c++) {
          out[i + c] = Math.abs(a[i + c] - b[i + c]);
        }
      }
      out[i + 3] = 255;
    }
  }
}

/** Normalized [-1, 1] cell-centered coordinate -> canvas pixel position.
 * Keypoints are stored (axis0, axis1) = (row, column). */
export function keypointToPixel(
  point: number[],
  width: number,
  height: number,
): { x: number; y: number } {
  return {
    x: ((point[1] + 1) * width) / 2 - 0.5,
    y: ((point[0] + 1) * height) / 2 - 0.5,
  };
}

export interface Marker {
  x: number;
  y: number;
  kind: "cross" | "dot";
}

/** Fixed keypoints render as crosses, warped-moving keypoints as dots. */
export function keypointMarkers(
  fixedKp: number[][],
  movingKp: number[][],
  width: number,
  height: number,
): Marker[] {
  const markers: Marker[] = [];
  for (const p of fixedKp) markers.push({ ...keypointToPixel(p, width, height), kind: "cross" });
  for (const p of movingKp) markers.push({ ...keypointToPixel(p, width, height), kind: "dot" });
  return markers;
}

export function drawMarkers(ctx: CanvasRenderingContext2D, markers: Marker[], scale: number): void {
  for (const m of markers) {
    const x = m.x * scale;
    const y = m.y * scale;
    if (m.kind === "cross") {
      ctx.strokeStyle = "#3cf";
      ctx.lineWidth = 1.5;
      ctx.beginPath();
      ctx.moveTo(x - 4, y);
      ctx.lineTo(x + 4, y);
      ctx.moveTo(x, y - 4);
      ctx.lineTo(x, y + 4);
      ctx.stroke();
    } else {
      ctx.fillStyle = "#fc3";
      ctx.beginPath();
      ctx.arc(x, y, 2.5, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
}
