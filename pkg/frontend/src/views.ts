/** Pure view-model helpers: every number they emit comes straight from a
 * service response, never from client-side statistics. */

import type { CohortHistoryEntry, RecommendationView } from "./model.js";

export interface HeatmapCell {
  dose: number;
  a: number; // agent A level, 1-based (column)
  b: number; // agent B level, 1-based
  estimate: number | null;
  interval: [number, number] | null;
  recommended: boolean;
}

/** Heatmap rows top-to-bottom: highest agent-B level first, so a 3x3 grid
 * renders with the b3 row on top.  Dose index d = (b-1)*rows + a. */
export function heatmapRows(
  view: RecommendationView,
  rows: number,
  cols: number,
): HeatmapCell[][] {
  const out: HeatmapCell[][] = [];
  for (let b = cols; b >= 1; b--) {
    const row: HeatmapCell[] = [];
    for (let a = 1; a <= rows; a++) {
      const dose = (b - 1) * rows + a;
      row.push({
        dose,
        a,
        b,
        estimate: view.estimates[String(dose)] ?? null,
        interval: view.intervals[String(dose)] ?? null,
        recommended: view.recommendation === dose,
      });
    }
    out.push(row);
  }
  return out;
}

export interface OrderingBar {
  ordering: number; // 1-based
  value: number;
  selected: boolean;
}

/** Bar-chart data for the ordering diagnostics.  Posterior probabilities are
 * used as-is (they sum to 1); AICs are turned into relative weights
 * exp(-(aic - min)/2) so that lower AIC shows as a taller bar. */
export function orderingBars(view: RecommendationView): OrderingBar[] {
  let values = view.ordering_stats;
  if (view.ordering_stat_kind === "aic") {
    const finite = values.filter((v) => Number.isFinite(v));
    const best = Math.min(...finite);
    values = values.map((v) => (Number.isFinite(v) ? Math.exp(-(v - best) / 2) : 0));
  }
  return values.map((value, i) => ({
    ordering: i + 1,
    value,
    selected: view.selected_ordering === i + 1,
  }));
}

export interface TimelineEntry {
  cohort: number; // 1-based
  label: string;
  recommendation: number;
  dlts: number;
  patients: number;
}

export function allocationTimeline(history: CohortHistoryEntry[]): TimelineEntry[] {
  return history.map((h, i) => {
    const patients = Object.values(h.alloc).reduce((s, v) => s + v, 0);
    const dlts = Object.values(h.dlts).reduce((s, v) => s + v, 0);
    const label = Object.entries(h.alloc)
      .sort(([x], [y]) => Number(x) - Number(y))
      .map(([arm, n]) => `${armName(Number(arm))}:${n}`)
      .join(" ");
    return { cohort: i + 1, label, recommendation: h.recommendation, dlts, patients };
  });
}

export function armName(arm: number): string {
  return arm === 0 ? "SoC" : `d${arm}`;
}

export function formatProbability(p: number | null): string {
  return p === null ? "-" : `${(100 * p).toFixed(1)}%`;
}

export function formatInterval(ci: [number, number] | null): string {
  if (ci === null) return "";
  return `(${(100 * ci[0]).toFixed(1)}-${(100 * ci[1]).toFixed(1)}%)`;
}
