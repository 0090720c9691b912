import { describe, expect, it } from "vitest";

import type { CohortHistoryEntry, RecommendationView } from "../src/model.js";
import {
  allocationTimeline,
  armName,
  formatInterval,
  formatProbability,
  heatmapRows,
  orderingBars,
} from "../src/views.js";

function view(partial: Partial<RecommendationView> = {}): RecommendationView {
  const estimates: Record<string, number | null> = {};
  const intervals: Record<string, [number, number]> = {};
  for (let d = 1; d <= 9; d++) {
    estimates[String(d)] = d / 20;
    intervals[String(d)] = [d / 40, d / 10];
  }
  return {
    trial_id: "t1",
    complete: false,
    recommendation: 5,
    next_allocation: { "5": 3 },
    selected_ordering: 2,
    ordering_stats: [0.1, 0.4, 0.2, 0.1, 0.1, 0.1],
    ordering_stat_kind: "posterior",
    estimates,
    intervals,
    patients_enrolled: 9,
    patients_remaining: 36,
    cohorts_recorded: 3,
    cohorts_total: 15,
    ...partial,
  };
}

describe("heatmapRows", () => {
  it("puts the top agent-B row first and indexes doses by rows", () => {
    const rows = heatmapRows(view(), 3, 3);
    // top row is b3: doses 7, 8, 9 left to right
    expect(rows[0].map((c) => c.dose)).toEqual([7, 8, 9]);
    expect(rows[1].map((c) => c.dose)).toEqual([4, 5, 6]);
    expect(rows[2].map((c) => c.dose)).toEqual([1, 2, 3]);
    expect(rows[0][0].b).toBe(3);
    expect(rows[2][0].a).toBe(1);
  });

  it("marks exactly the recommended dose and copies service numbers verbatim", () => {
    const rows = heatmapRows(view(), 3, 3);
    const flat = rows.flat();
    expect(flat.filter((c) => c.recommended).map((c) => c.dose)).toEqual([5]);
    const d7 = flat.find((c) => c.dose === 7)!;
    expect(d7.estimate).toBe(7 / 20);
    expect(d7.interval).toEqual([7 / 40, 7 / 10]);
  });

  it("leaves missing estimates null", () => {
    const rows = heatmapRows(view({ estimates: {}, intervals: {} }), 3, 3);
    expect(rows[0][0].estimate).toBeNull();
    expect(rows[0][0].interval).toBeNull();
  });
});

describe("orderingBars", () => {
  it("passes posterior probabilities through and they sum to 1", () => {
    const bars = orderingBars(view());
    const total = bars.reduce((s, b) => s + b.value, 0);
    expect(total).toBeCloseTo(1, 12);
    expect(bars.filter((b) => b.selected).map((b) => b.ordering)).toEqual([2]);
  });

  it("gives the smallest AIC the tallest bar", () => {
    const bars = orderingBars(
      view({ ordering_stat_kind: "aic", ordering_stats: [12, 10, 15], selected_ordering: 2 }),
    );
    expect(bars[1].value).toBe(1);
    expect(bars[0].value).toBeCloseTo(Math.exp(-1), 12);
    expect(bars[2].value).toBeLessThan(bars[0].value);
  });
});

describe("allocationTimeline", () => {
  it("has one entry per cohort with totals from the response", () => {
    const history: CohortHistoryEntry[] = [
      {
        alloc: { "1": 3, "0": 1 },
        dlts: { "1": 1, "0": 0 },
        selected_ordering: 1,
        recommendation: 2,
        phat: [null, 0.2],
        ordering_stats: [],
      },
      {
        alloc: { "2": 3, "0": 1 },
        dlts: { "2": 2, "0": 1 },
        selected_ordering: 3,
        recommendation: 1,
        phat: [null, 0.3],
        ordering_stats: [],
      },
    ];
    const timeline = allocationTimeline(history);
    expect(timeline).toHaveLength(2);
    expect(timeline[0]).toEqual({
      cohort: 1,
      label: "SoC:1 d1:3",
      recommendation: 2,
      dlts: 1,
      patients: 4,
    });
    expect(timeline[1].dlts).toBe(3);
    expect(timeline[1].patients).toBe(4);
  });
});

describe("formatting", () => {
  it("names arms and renders percents", () => {
    expect(armName(0)).toBe("SoC");
    expect(armName(4)).toBe("d4");
    expect(formatProbability(0.305)).toBe("30.5%");
    expect(formatProbability(null)).toBe("-");
    expect(formatInterval([0.1, 0.25])).toBe("(10.0-25.0%)");
    expect(formatInterval(null)).toBe("");
  });
});
