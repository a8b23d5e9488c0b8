/** Pure view-state logic for the lambda explorer. */

export type OverlayMode = "checkerboard" | "blend" | "difference";

export interface Metrics {
  dice_mean: number;
  dice_per_label: Record<string, number>;
  hausdorff: number;
  hausdorff95: number;
  jd_std: number;
  jd_neg_frac: number;
}

export interface SweepEntry {
  lambda: number;
  moving_keypoints: number[][];
  fixed_keypoints: number[][];
  metrics: Metrics | null;
  warped_png: string; // base64-encoded PNG
  timing_ms: number;
}

export interface SweepResponse {
  moving: string;
  fixed: string;
  entries: SweepEntry[];
  fixed_png: string;
}

export interface SweepViewState {
  movingId: string;
  fixedId: string;
  lambdaGrid: number[];
  activeIndex: number;
  overlayMode: OverlayMode;
  showKeypoints: boolean;
  entries: SweepEntry[];
  fixedPng: string;
}

export interface RoiSeries {
  label: string;
  dice: number[];
  argmaxIndex: number;
}

/** Returns an error message, or null when the grid is usable. */
export function validateGrid(grid: number[]): string | null {
  if (grid.length === 0) return "lambda grid is empty";
  for (const v of grid) {
    if (!Number.isFinite(v)) return `lambda ${v} is not a finite number`;
    if (v < 0) return `lambda ${v} is negative`;
  }
  for (let i = 1; i < grid.length; i++) {
    if (grid[i] <= grid[i - 1]) {
      return `lambda grid must be strictly increasing (${grid[i - 1]} then ${grid[i]})`;
    }
  }
  return null;
}

/** Parses a comma-separated lambda list; throws on invalid grids. */
export function parseGrid(text: string): number[] {
  const grid = text
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map(Number);
  const err = validateGrid(grid);
  if (err) throw new Error(err);
  return grid;
}

export function buildState(
  resp: SweepResponse,
  grid: number[],
  prev?: Pick<SweepViewState, "overlayMode" | "showKeypoints">,
): SweepViewState {
  if (resp.entries.length !== grid.length) {
    throw new Error(
      `server returned ${resp.entries.length} entries for ${grid.length} lambdas`,
    );
  }
  return {
    movingId: resp.moving,
    fixedId: resp.fixed,
    lambdaGrid: grid,
    activeIndex: 0,
    overlayMode: prev?.overlayMode ?? "checkerboard",
    showKeypoints: prev?.showKeypoints ?? true,
    entries: resp.entries,
    fixedPng: resp.fixed_png,
  };
}

export function setActiveIndex(state: SweepViewState, index: number): SweepViewState {
  const clamped = Math.min(Math.max(Math.round(index), 0), state.lambdaGrid.length - 1);
  if (clamped === state.activeIndex) return state;
  return { ...state, activeIndex: clamped };
}

export function stepKnob(state: SweepViewState, delta: number): SweepViewState {
  return setActiveIndex(state, state.activeIndex + delta);
}

export function activeEntry(state: SweepViewState): SweepEntry {
  return state.entries[state.activeIndex];
}

/** One Dice-vs-lambda series per label, with the argmax position marked. */
export function roiSeries(state: SweepViewState): RoiSeries[] {
  const labels = new Set<string>();
  for (const e of state.entries) {
    for (const k of Object.keys(e.metrics?.dice_per_label ?? {})) labels.add(k);
  }
  return [...labels].sort().map((label) => {
    const dice = state.entries.map((e) => e.metrics?.dice_per_label[label] ?? NaN);
    let argmaxIndex = 0;
    for (let i = 1; i < dice.length; i++) {
      if (Number.isNaN(dice[i])) continue;
      if (Number.isNaN(dice[argmaxIndex]) || dice[i] > dice[argmaxIndex]) argmaxIndex = i;
    }
    return { label, dice, argmaxIndex };
  });
}

/** Snaps the knob to the argmax of one ROI series. */
export function snapToSeriesMax(state: SweepViewState, series: RoiSeries): SweepViewState {
  return setActiveIndex(state, series.argmaxIndex);
}
