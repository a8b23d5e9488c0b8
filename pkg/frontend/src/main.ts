/** Wires the sweep view to the DOM: pair pickers, lambda knob, overlay
 * canvas, and the per-ROI Dice chart. All frames come from one sweep
 * request; knob motion afterwards touches no network. */

import { fetchSubjects, loadSweep, pngDataUrl } from "./api.js";
import { drawChart, hitTest, layoutChart, MarkerHit, formatLambda } from "./chart.js";
import { composite, drawMarkers, keypointMarkers } from "./overlay.js";
import {
  activeEntry,
  buildState,
  OverlayMode,
  parseGrid,
  roiSeries,
  setActiveIndex,
  SweepViewState,
} from "./state.js";

const SCALE = 4; // canvas upscale factor for desk-sized images

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

interface Frames {
  fixed: ImageData;
  warped: ImageData[];
}

let state: SweepViewState | null = null;
let frames: Frames | null = null;
let markers: MarkerHit[] = [];

async function decodeImage(base64: string): Promise<ImageData> {
  const img = new Image();
  await new Promise<void>((resolve, reject) => {
    img.onload = () => resolve();
    img.onerror = () => reject(new Error("failed to decode frame"));
    img.src = pngDataUrl(base64);
  });
  const canvas = document.createElement("canvas");
  canvas.width = img.naturalWidth;
  canvas.height = img.naturalHeight;
  const ctx = canvas.getContext("2d")!;
  ctx.drawImage(img, 0, 0);
  return ctx.getImageData(0, 0, canvas.width, canvas.height);
}

function showBanner(message: string | null): void {
  const banner = el<HTMLDivElement>("banner");
  banner.textContent = message ?? "";
  banner.style.display = message ? "block" : "none";
}

function renderOverlay(): void {
  if (!state || !frames) return;
  const { fixed, warped } = frames;
  const canvas = el<HTMLCanvasElement>("overlay");
  const w = fixed.width;
  const h = fixed.height;
  canvas.width = w * SCALE;
  canvas.height = h * SCALE;
  const out = new ImageData(w, h);
  composite(state.overlayMode, fixed.data, warped[state.activeIndex].data, out.data, w, h);

  const small = document.createElement("canvas");
  small.width = w;
  small.height = h;
  small.getContext("2d")!.putImageData(out, 0, 0);
  const ctx = canvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(small, 0, 0, canvas.width, canvas.height);

  if (state.showKeypoints) {
    const entry = activeEntry(state);
    drawMarkers(ctx, keypointMarkers(entry.fixed_keypoints, entry.moving_keypoints, w, h), SCALE);
  }

  const entry = activeEntry(state);
  el<HTMLSpanElement>("lambda-readout").textContent = `λ = ${formatLambda(
    state.lambdaGrid[state.activeIndex],
  )}`;
  el<HTMLSpanElement>("dice-readout").textContent = entry.metrics
    ? `mean Dice ${entry.metrics.dice_mean.toFixed(3)}`
    : "";
}

function renderChart(): void {
  if (!state) return;
  const canvas = el<HTMLCanvasElement>("chart");
  const ctx = canvas.getContext("2d")!;
  const layout = layoutChart(state.lambdaGrid, canvas.width, canvas.height);
  markers = drawChart(ctx, state, roiSeries(state), layout);
}

function renderAll(): void {
  renderOverlay();
  renderChart();
}

function setKnob(index: number): void {
  if (!state) return;
  state = setActiveIndex(state, index);
  el<HTMLInputElement>("knob").value = String(state.activeIndex);
  renderAll();
}

// knob events are debounced so dragging repaints at most once per frame
let knobTimer: number | undefined;
function onKnobInput(): void {
  if (knobTimer !== undefined) return;
  knobTimer = window.setTimeout(() => {
    knobTimer = undefined;
    setKnob(Number(el<HTMLInputElement>("knob").value));
  }, 16);
}

async function onLoadSweep(): Promise<void> {
  showBanner(null);
  try {
    const grid = parseGrid(el<HTMLInputElement>("lambdas").value);
    const moving = el<HTMLSelectElement>("moving").value;
    const fixed = el<HTMLSelectElement>("fixed").value;
    const button = el<HTMLButtonElement>("load");
    button.disabled = true;
    try {
      const resp = await loadSweep(moving, fixed, grid, (url) => fetch(url));
      state = buildState(resp, grid, state ?? undefined);
      frames = {
        fixed: await decodeImage(resp.fixed_png),
        warped: await Promise.all(resp.entries.map((e) => decodeImage(e.warped_png))),
      };
    } finally {
      button.disabled = false;
    }
    const knob = el<HTMLInputElement>("knob");
    knob.min = "0";
    knob.max = String(grid.length - 1);
    knob.step = "1";
    knob.value = "0";
    knob.disabled = false;
    renderAll();
  } catch (err) {
    showBanner(err instanceof Error ? err.message : String(err));
  }
}

async function init(): Promise<void> {
  try {
    const subjects = await fetchSubjects((url) => fetch(url));
    for (const id of ["moving", "fixed"] as const) {
      const select = el<HTMLSelectElement>(id);
      for (const s of subjects) {
        const opt = document.createElement("option");
        opt.value = s.id;
        opt.textContent = s.id;
        select.appendChild(opt);
      }
    }
    if (subjects.length > 1) el<HTMLSelectElement>("fixed").selectedIndex = 1;
  } catch (err) {
    showBanner(err instanceof Error ? err.message : String(err));
  }

  el<HTMLButtonElement>("load").addEventListener("click", () => void onLoadSweep());
  el<HTMLInputElement>("knob").addEventListener("input", onKnobInput);
  el<HTMLInputElement>("show-kp").addEventListener("change", (e) => {
    if (!state) return;
    state = { ...state, showKeypoints: (e.target as HTMLInputElement).checked };
    renderOverlay();
  });
  for (const mode of ["checkerboard", "blend", "difference"] as OverlayMode[]) {
    el<HTMLInputElement>(`mode-${mode}`).addEventListener("change", () => {
      if (!state) return;
      state = { ...state, overlayMode: mode };
      renderOverlay();
    });
  }
  el<HTMLCanvasElement>("chart").addEventListener("click", (e) => {
    if (!state) return;
    const rect = (e.target as HTMLCanvasElement).getBoundingClientRect();
    const hit = hitTest(markers, e.clientX - rect.left, e.clientY - rect.top);
    if (hit) setKnob(hit.gridIndex);
  });
}

void init();
