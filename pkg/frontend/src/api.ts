/** Thin typed client for the conduct service.  Non-2xx responses raise
 * ApiError with the server's detail string so panels can render it inline. */

import type { RecommendationView, TrialStateView } from "./model.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    detail: string,
  ) {
    super(detail);
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(path, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    const detail =
      typeof body?.detail === "string" ? body.detail : JSON.stringify(body?.detail ?? body);
    throw new ApiError(resp.status, detail || resp.statusText);
  }
  return body as T;
}

export interface TrialSummary {
  trial_id: string;
  complete: boolean;
  cohorts_recorded: number;
  design: string;
}

export const api = {
  listTrials: () => request<{ trials: TrialSummary[] }>("/trials"),

  createTrial: (config: Record<string, unknown>, key: string) =>
    request<RecommendationView>("/trials", {
      method: "POST",
      body: JSON.stringify({ config, key }),
    }),

  getTrial: (id: string) => request<TrialStateView>(`/trials/${id}`),

  recordCohort: (id: string, outcomes: Record<number, number>, key: string) =>
    request<RecommendationView>(`/trials/${id}/cohorts`, {
      method: "POST",
      body: JSON.stringify({ outcomes, key }),
    }),

  whatIf: (id: string, outcomes: Record<number, number>) =>
    request<RecommendationView>(`/trials/${id}/whatif`, {
      method: "POST",
      body: JSON.stringify({ outcomes }),
    }),

  undo: (id: string, key: string) =>
    request<RecommendationView>(`/trials/${id}/undo`, {
      method: "POST",
      body: JSON.stringify({ key }),
    }),
};
