/** Service client. One sweep request fetches and caches everything the
 * knob needs; moving the knob afterwards performs no network calls. */

import { SweepResponse, validateGrid } from "./state.js";

export type FetchLike = (url: string) => Promise<{
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
}>;

export interface SubjectInfo {
  id: string;
  modalities: number;
  shape: number[];
}

export async function fetchSubjects(fetchFn: FetchLike): Promise<SubjectInfo[]> {
  const resp = await fetchFn("/api/subjects");
  if (!resp.ok) throw new Error(`subject listing failed (HTTP ${resp.status})`);
  const body = (await resp.json()) as { subjects: SubjectInfo[] };
  return body.subjects;
}

/** Issues exactly one network request for the whole sweep. */
export async function loadSweep(
  moving: string,
  fixed: string,
  grid: number[],
  fetchFn: FetchLike,
): Promise<SweepResponse> {
  const err = validateGrid(grid);
  if (err) throw new Error(err);
  const lambdas = grid.join(",");
  const url =
    `/api/sweep?moving=${encodeURIComponent(moving)}` +
    `&fixed=${encodeURIComponent(fixed)}&lambdas=${encodeURIComponent(lambdas)}`;
  const resp = await fetchFn(url);
  if (!resp.ok) {
    const detail = await resp
      .json()
      .then((b) => (b as { detail?: string }).detail)
      .catch(() => undefined);
    throw new Error(detail ?? `sweep request failed (HTTP ${resp.status})`);
  }
  return (await resp.json()) as SweepResponse;
}

export function pngDataUrl(base64: string): string {
  return `data:image/png;base64,${base64}`;
}
