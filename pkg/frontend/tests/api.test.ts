import { describe, expect, it, vi } from "vitest";

import { FetchLike, loadSweep, pngDataUrl } from "../src/api.js";
import { setActiveIndex } from "../src/state.js";

function mockResponse(body: unknown, ok = true, status = 200) {
  return { ok, status, json: () => Promise.resolve(body) };
}

const SWEEP_BODY = {
  moving: "0000",
  fixed: "0001",
  fixed_png: "QUJD",
  entries: [0, 0.1, 1].map((lambda) => ({
    lambda,
    moving_keypoints: [[0, 0]],
    fixed_keypoints: [[0, 0]],
    metrics: null,
    warped_png: "QUJD",
    timing_ms: 1,
  })),
};

describe("loadSweep", () => {
  it("issues exactly one request for the whole grid", async () => {
    const fetchFn = vi.fn<Parameters<FetchLike>, ReturnType<FetchLike>>(() =>
      Promise.resolve(mockResponse(SWEEP_BODY)),
    );
    const resp = await loadSweep("0000", "0001", [0, 0.1, 1], fetchFn);
    expect(fetchFn).toHaveBeenCalledTimes(1);
    expect(fetchFn.mock.calls[0][0]).toContain("lambdas=0%2C0.1%2C1");
    expect(resp.entries).toHaveLength(3);
  });

  it("knob moves after load trigger no further requests", async () => {
    const fetchFn = vi.fn<Parameters<FetchLike>, ReturnType<FetchLike>>(() =>
      Promise.resolve(mockResponse(SWEEP_BODY)),
    );
    const resp = await loadSweep("0000", "0001", [0, 0.1, 1], fetchFn);
    let state = {
      movingId: resp.moving,
      fixedId: resp.fixed,
      lambdaGrid: [0, 0.1, 1],
      activeIndex: 0,
      overlayMode: "blend" as const,
      showKeypoints: true,
      entries: resp.entries,
      fixedPng: resp.fixed_png,
    };
    for (const i of [1, 2, 0, 2]) state = setActiveIndex(state, i);
    expect(state.activeIndex).toBe(2);
    expect(fetchFn).toHaveBeenCalledTimes(1);
  });

  it("validates the grid before any request", async () => {
    const fetchFn = vi.fn<Parameters<FetchLike>, ReturnType<FetchLike>>();
    await expect(loadSweep("a", "b", [], fetchFn)).rejects.toThrow(/empty/);
    await expect(loadSweep("a", "b", [1, 0.1], fetchFn)).rejects.toThrow(/increasing/);
    expect(fetchFn).not.toHaveBeenCalled();
  });

  it("surfaces server error details", async () => {
    const fetchFn: FetchLike = () =>
      Promise.resolve(mockResponse({ detail: "unknown subject 'zzzz'" }, false, 404));
    await expect(loadSweep("zzzz", "b", [0.1], fetchFn)).rejects.toThrow(/unknown subject/);
  });
});

describe("pngDataUrl", () => {
  it("wraps base64 payloads", () => {
    expect(pngDataUrl("QUJD")).toBe("data:image/png;base64,QUJD");
  });
});
