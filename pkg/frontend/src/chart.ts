/** Per-ROI Dice-vs-lambda chart: log-x layout, argmax markers, click
 * hit-testing. Layout math is pure; drawing takes a 2D context. */

import { RoiSeries, SweepViewState } from "./state.js";

export interface ChartLayout {
  width: number;
  height: number;
  left: number;
  right: number;
  top: number;
  bottom: number;
  /** x pixel per lambda-grid index */
  xs: number[];
}

const SERIES_COLORS = ["#e6553f", "#3f7fe6", "#3fae5c", "#b03fe6", "#e6a83f", "#3fc9c9"];

/** Log-x positions; lambda = 0 gets a dedicated leftmost slot (axis break). */
export function layoutChart(grid: number[], width: number, height: number): ChartLayout {
  const left = 42;
  const right = width - 12;
  const top = 10;
  const bottom = height - 26;
  const positive = grid.filter((v) => v > 0);
  const hasZero = grid.length > positive.length;
  const zeroSlot = left;
  const posLeft = hasZero ? left + 0.12 * (right - left) : left;
  const lo = Math.log10(positive[0] ?? 1);
  const hi = Math.log10(positive[positive.length - 1] ?? 1);
  const span = hi - lo;
  const xs = grid.map((v) => {
    if (v === 0) return zeroSlot;
    if (span === 0) return (posLeft + right) / 2;
    return posLeft + ((Math.log10(v) - lo) / span) * (right - posLeft);
  });
  return { width, height, left, right, top, bottom, xs };
}

export function diceToY(layout: ChartLayout, dice: number): number {
  return layout.bottom - dice * (layout.bottom - layout.top);
}

export interface MarkerHit {
  seriesIndex: number;
  gridIndex: number;
  x: number;
  y: number;
}

/** Argmax marker positions for every series. */
export function argmaxMarkers(layout: ChartLayout, series: RoiSeries[]): MarkerHit[] {
  return series.map((s, si) => ({
    seriesIndex: si,
    gridIndex: s.argmaxIndex,
    x: layout.xs[s.argmaxIndex],
    y: diceToY(layout, s.dice[s.argmaxIndex]),
  }));
}

/** Nearest argmax marker within radius, or null. */
export function hitTest(
  markers: MarkerHit[],
  x: number,
  y: number,
  radius = 8,
): MarkerHit | null {
  let best: MarkerHit | null = null;
  let bestDist = radius;
  for (const m of markers) {
    const dist = Math.hypot(m.x - x, m.y - y);
    if (dist <= bestDist) {
      best = m;
      bestDist = dist;
    }
  }
  return best;
}

export function drawChart(
  ctx: CanvasRenderingContext2D,
  state: SweepViewState,
  series: RoiSeries[],
  layout: ChartLayout,
): MarkerHit[] {
  const { left, right, top, bottom, xs } = layout;
  ctx.clearRect(0, 0, layout.width, layout.height);
  ctx.strokeStyle = "#555";
  ctx.strokeRect(left, top, right - left, bottom - top);

  ctx.fillStyle = "#aaa";
  ctx.font = "10px sans-serif";
  ctx.textAlign = "center";
  for (let i = 0; i < xs.length; i++) {
    ctx.fillText(formatLambda(state.lambdaGrid[i]), xs[i], bottom + 14);
  }
  ctx.textAlign = "right";
  for (const d of [0, 0.5, 1]) {
    ctx.fillText(d.toFixed(1), left - 4, diceToY(layout, d) + 3);
  }

  series.forEach((s, si) => {
    ctx.strokeStyle = SERIES_COLORS[si % SERIES_COLORS.length];
    ctx.beginPath();
    let started = false;
    for (let i = 0; i < xs.length; i++) {
      if (Number.isNaN(s.dice[i])) continue;
      const y = diceToY(layout, s.dice[i]);
      if (started) ctx.lineTo(xs[i], y);
      else ctx.moveTo(xs[i], y);
      started = true;
    }
    if (xs.length > 1) ctx.stroke();
    ctx.fillStyle = ctx.strokeStyle;
    for (let i = 0; i < xs.length; i++) {
      if (Number.isNaN(s.dice[i])) continue;
      ctx.beginPath();
      ctx.arc(xs[i], diceToY(layout, s.dice[i]), 2, 0, 2 * Math.PI);
      ctx.fill();
    }
  });

  const markers = argmaxMarkers(layout, series);
  for (const m of markers) {
    ctx.fillStyle = SERIES_COLORS[m.seriesIndex % SERIES_COLORS.length];
    drawStar(ctx, m.x, m.y, 6);
  }

  // active-lambda cursor
  const ax = xs[state.activeIndex];
  ctx.strokeStyle = "#888";
  ctx.setLineDash([3, 3]);
  ctx.beginPath();
  ctx.moveTo(ax, top);
  ctx.lineTo(ax, bottom);
  ctx.stroke();
  ctx.setLineDash([]);
  return markers;
}

export function formatLambda(v: number): string {
  if (v === 0) return "0";
  if (v >= 0.01 && v < 100) return String(Number(v.toPrecision(3)));
  return v.toExponential(0);
}

function drawStar(ctx: CanvasRenderingContext2D, x: number, y: number, r: number): void {
  ctx.beginPath();
  for (let k = 0; k < 10; k++) {
    const ang = (Math.PI / 5) * k - Math.PI / 2;
    const rad = k % 2 === 0 ? r : r / 2.4;
    const px = x + rad * Math.cos(ang);
    const py = y + rad * Math.sin(ang);
    if (k === 0) ctx.moveTo(px, py);
    else ctx.lineTo(px, py);
  }
  ctx.closePath();
  ctx.fill();
}
