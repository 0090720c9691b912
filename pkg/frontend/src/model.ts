/** Domain types mirrored from the conduct service, plus the client-side
 * config validation that pre-checks a setup form before submission.  The
 * server stays authoritative; these rules only catch obvious mistakes early.
 */

export type Design = "poblrm" | "pocrm";

export interface NormalPriorDraft {
  mu1: number;
  mu2: number;
  sigma1: number;
  sigma2: number;
}

export interface ConfigDraft {
  design: Design;
  rows: number;
  cols: number;
  ttl: number;
  n_cohorts: number;
  m1: number;
  m2: number;
  randomised: boolean;
  skeleton_p1: number;
  skeleton_nu: number;
  prior: NormalPriorDraft;
  crm_sigma: number;
  soc_skeleton: number | null;
}

export interface RecommendationView {
  trial_id: string;
  complete: boolean;
  recommendation: number;
  next_allocation: Record<string, number>;
  selected_ordering: number;
  ordering_stats: number[];
  ordering_stat_kind: "aic" | "posterior";
  estimates: Record<string, number | null>;
  intervals: Record<string, [number, number]>;
  patients_enrolled: number;
  patients_remaining: number;
  cohorts_recorded: number;
  cohorts_total: number;
  whatif?: boolean;
}

export interface CohortHistoryEntry {
  alloc: Record<string, number>;
  dlts: Record<string, number>;
  selected_ordering: number;
  recommendation: number;
  phat: (number | null)[];
  ordering_stats: number[];
}

export interface TrialStateView extends RecommendationView {
  config: Record<string, unknown>;
  history: CohortHistoryEntry[];
}

/** Defaults a fresh wizard shows: 3x3 grid, TTL 0.3, 15 cohorts of 3. */
export function defaultDraft(): ConfigDraft {
  return {
    design: "poblrm",
    rows: 3,
    cols: 3,
    ttl: 0.3,
    n_cohorts: 15,
    m1: 3,
    m2: 0,
    randomised: false,
    skeleton_p1: 0.15,
    skeleton_nu: 0.01,
    prior: { mu1: 1, mu2: -1, sigma1: 1, sigma2: 1 },
    crm_sigma: 0.5,
    soc_skeleton: null,
  };
}

/** Field-level problems, empty when the draft looks submittable. */
export function validateDraft(d: ConfigDraft): string[] {
  const errors: string[] = [];
  if (!Number.isInteger(d.rows) || !Number.isInteger(d.cols) || d.rows < 1 || d.cols < 1) {
    errors.push("grid needs at least one level per agent");
  }
  if (!(d.ttl > 0 && d.ttl < 1)) {
    errors.push("target toxicity level must lie in (0, 1)");
  }
  if (!Number.isInteger(d.n_cohorts) || d.n_cohorts < 1) {
    errors.push("need at least one cohort");
  }
  if (!Number.isInteger(d.m1) || d.m1 < 1) {
    errors.push("m1 must be at least 1");
  }
  if (d.randomised && (!Number.isInteger(d.m2) || d.m2 < 1)) {
    errors.push("randomised design needs m2 >= 1");
  }
  if (!d.randomised && d.m2 !== 0) {
    errors.push("m2 must be 0 unless randomised");
  }
  const k = d.rows * d.cols;
  if (!(d.skeleton_p1 > 0 && d.skeleton_p1 < 1) || d.skeleton_nu <= 0) {
    errors.push("skeleton needs p1 in (0, 1) and a positive step");
  } else if (d.skeleton_p1 + (k - 1) * d.skeleton_nu >= 1) {
    errors.push("skeleton infeasible: p1 + (k-1)*step reaches 1");
  }
  if (d.design === "pocrm" && d.crm_sigma <= 0) {
    errors.push("the power-model design needs a positive sigma");
  }
  if (d.design === "poblrm" && (d.prior.sigma1 <= 0 || d.prior.sigma2 <= 0)) {
    errors.push("prior standard deviations must be positive");
  }
  if (d.randomised && d.soc_skeleton !== null && !(d.soc_skeleton > 0 && d.soc_skeleton < 1)) {
    errors.push("SoC prior toxicity must lie in (0, 1)");
  }
  return errors;
}

/** Server config payload for POST /trials; only the fields the chosen design
 * uses are sent. */
export function toConfigPayload(d: ConfigDraft): Record<string, unknown> {
  const payload: Record<string, unknown> = {
    schema_version: 1,
    design: d.design,
    rows: d.rows,
    cols: d.cols,
    ttl: d.ttl,
    n_cohorts: d.n_cohorts,
    m1: d.m1,
    m2: d.randomised ? d.m2 : 0,
    randomised: d.randomised,
    skeleton_p1: d.skeleton_p1,
    skeleton_nu: d.skeleton_nu,
  };
  if (d.design === "poblrm") {
    payload.prior = { ...d.prior };
  } else {
    payload.crm_sigma = d.crm_sigma;
  }
  if (d.randomised && d.soc_skeleton !== null) {
    payload.soc_skeleton = d.soc_skeleton;
  }
  return payload;
}

/** Arms a cohort-entry form must cover: exactly the pending allocation. */
export function entryArms(view: RecommendationView): { arm: number; n: number }[] {
  return Object.entries(view.next_allocation)
    .map(([arm, n]) => ({ arm: Number(arm), n }))
    .sort((a, b) => a.arm - b.arm);
}

export function validateOutcomes(
  view: RecommendationView,
  outcomes: Record<number, number>,
): string[] {
  const errors: string[] = [];
  for (const { arm, n } of entryArms(view)) {
    const v = outcomes[arm];
    if (v === undefined || !Number.isInteger(v)) {
      errors.push(`arm ${arm}: DLT count required`);
    } else if (v < 0 || v > n) {
      errors.push(`arm ${arm}: DLT count must be between 0 and ${n}`);
    }
  }
  const extra = Object.keys(outcomes)
    .map(Number)
    .filter((a) => !(a in view.next_allocation));
  for (const a of extra) {
    errors.push(`arm ${a}: not part of the pending allocation`);
  }
  return errors;
}

let counter = 0;

/** Unique idempotency key per mutating request. */
export function freshKey(prefix: string): string {
  counter += 1;
  return `${prefix}-${Date.now()}-${counter}-${Math.random().toString(36).slice(2, 10)}`;
}
