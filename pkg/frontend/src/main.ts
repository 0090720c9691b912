/** Dashboard wiring: one page, three areas (trial list + setup wizard,
 * conduct panel, diagnostics).  All state transitions go through the service;
 * the page re-renders from the latest response. */

import { ApiError, api } from "./api.js";
import {
  ConfigDraft,
  RecommendationView,
  TrialStateView,
  defaultDraft,
  entryArms,
  freshKey,
  toConfigPayload,
  validateDraft,
  validateOutcomes,
} from "./model.js";
import {
  allocationTimeline,
  armName,
  formatInterval,
  formatProbability,
  heatmapRows,
  orderingBars,
} from "./views.js";

const root = document.getElementById("app");

interface AppState {
  trialId: string | null;
  view: TrialStateView | null;
  draft: ConfigDraft;
  draftErrors: string[];
  whatIfResults: { label: string; view: RecommendationView }[];
  toast: string | null;
}

const state: AppState = {
  trialId: null,
  view: null,
  draft: defaultDraft(),
  draftErrors: [],
  whatIfResults: [],
  toast: null,
};

function el(tag: string, cls?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

function toast(message: string): void {
  state.toast = message;
  render();
  setTimeout(() => {
    if (state.toast === message) {
      state.toast = null;
      render();
    }
  }, 4000);
}

async function refresh(): Promise<void> {
  if (!state.trialId) return;
  state.view = await api.getTrial(state.trialId);
  render();
}

async function guarded(action: () => Promise<void>): Promise<void> {
  try {
    await action();
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      toast(`conflict: ${err.message}; refreshing`);
      await refresh();
    } else if (err instanceof ApiError) {
      toast(`${err.status}: ${err.message}`);
    } else {
      toast(String(err));
    }
  }
}

// -- setup wizard -----------------------------------------------------------

function numberInput(
  label: string,
  value: number,
  onChange: (v: number) => void,
  step = "any",
): HTMLElement {
  const wrap = el("label", "field");
  wrap.append(el("span", "field-label", label));
  const input = document.createElement("input");
  input.type = "number";
  input.step = step;
  input.value = String(value);
  input.addEventListener("change", () => onChange(Number(input.value)));
  wrap.append(input);
  return wrap;
}

function renderWizard(): HTMLElement {
  const d = state.draft;
  const panel = el("section", "panel wizard");
  panel.append(el("h2", undefined, "New trial"));

  const designRow = el("div", "row");
  for (const design of ["poblrm", "pocrm"] as const) {
    const btn = el("button", d.design === design ? "choice active" : "choice", design);
    btn.addEventListener("click", () => {
      d.design = design;
      render();
    });
    designRow.append(btn);
  }
  panel.append(designRow);

  const grid = el("div", "grid-fields");
  grid.append(
    numberInput("agent A levels", d.rows, (v) => (d.rows = v), "1"),
    numberInput("agent B levels", d.cols, (v) => (d.cols = v), "1"),
    numberInput("target toxicity", d.ttl, (v) => (d.ttl = v)),
    numberInput("cohorts", d.n_cohorts, (v) => (d.n_cohorts = v), "1"),
    numberInput("skeleton p1", d.skeleton_p1, (v) => (d.skeleton_p1 = v)),
    numberInput("skeleton step", d.skeleton_nu, (v) => (d.skeleton_nu = v)),
  );
  if (d.design === "poblrm") {
    grid.append(
      numberInput("prior mu1", d.prior.mu1, (v) => (d.prior.mu1 = v)),
      numberInput("prior mu2", d.prior.mu2, (v) => (d.prior.mu2 = v)),
      numberInput("prior sigma1", d.prior.sigma1, (v) => (d.prior.sigma1 = v)),
      numberInput("prior sigma2", d.prior.sigma2, (v) => (d.prior.sigma2 = v)),
    );
  } else {
    grid.append(numberInput("sigma", d.crm_sigma, (v) => (d.crm_sigma = v)));
  }

  const randomisedWrap = el("label", "field checkbox");
  const check = document.createElement("input");
  check.type = "checkbox";
  check.checked = d.randomised;
  check.addEventListener("change", () => {
    d.randomised = check.checked;
    d.m2 = d.randomised ? Math.max(d.m2, 1) : 0;
    render();
  });
  randomisedWrap.append(check, el("span", "field-label", "randomised against SoC"));
  grid.append(randomisedWrap);

  if (d.randomised) {
    // the m1/m2 split and the SoC prior only matter with a control arm
    grid.append(
      numberInput("m1 (dose arm)", d.m1, (v) => (d.m1 = v), "1"),
      numberInput("m2 (SoC arm)", d.m2, (v) => (d.m2 = v), "1"),
      numberInput("SoC prior toxicity", d.soc_skeleton ?? d.skeleton_p1 / 2, (v) => (d.soc_skeleton = v)),
    );
  } else {
    grid.append(numberInput("cohort size", d.m1, (v) => (d.m1 = v), "1"));
  }
  panel.append(grid);

  state.draftErrors = validateDraft(d);
  if (state.draftErrors.length) {
    const list = el("ul", "errors");
    for (const e of state.draftErrors) list.append(el("li", undefined, e));
    panel.append(list);
  }

  const submit = el("button", "primary", "Create trial") as HTMLButtonElement;
  submit.disabled = state.draftErrors.length > 0;
  submit.addEventListener("click", () =>
    guarded(async () => {
      const view = await api.createTrial(toConfigPayload(d), freshKey("create"));
      state.trialId = view.trial_id;
      state.whatIfResults = [];
      await refresh();
    }),
  );
  panel.append(submit);
  return panel;
}

// -- trial list -------------------------------------------------------------

async function renderTrialList(target: HTMLElement): Promise<void> {
  const { trials } = await api.listTrials();
  const panel = el("section", "panel");
  panel.append(el("h2", undefined, "Trials"));
  for (const t of trials) {
    const row = el(
      "button",
      t.trial_id === state.trialId ? "trial-row active" : "trial-row",
      `${t.trial_id} ${t.design} ${t.cohorts_recorded} cohorts${t.complete ? " (complete)" : ""}`,
    );
    row.addEventListener("click", () =>
      guarded(async () => {
        state.trialId = t.trial_id;
        state.whatIfResults = [];
        await refresh();
      }),
    );
    panel.append(row);
  }
  target.prepend(panel);
}

// -- conduct panel ----------------------------------------------------------

function outcomeForm(
  view: RecommendationView,
  submitLabel: string,
  onSubmit: (outcomes: Record<number, number>) => void,
): HTMLElement {
  const form = el("div", "outcome-form");
  const fields = new Map<number, HTMLInputElement>();
  for (const { arm, n } of entryArms(view)) {
    const wrap = el("label", "field");
    wrap.append(el("span", "field-label", `${armName(arm)} DLTs / ${n}`));
    const input = document.createElement("input");
    input.type = "number";
    input.min = "0";
    input.max = String(n);
    input.step = "1";
    input.value = "0";
    fields.set(arm, input);
    wrap.append(input);
    form.append(wrap);
  }
  const btn = el("button", "primary", submitLabel);
  btn.addEventListener("click", () => {
    const outcomes: Record<number, number> = {};
    for (const [arm, input] of fields) outcomes[arm] = Number(input.value);
    const errors = validateOutcomes(view, outcomes);
    if (errors.length) {
      toast(errors.join("; "));
      return;
    }
    onSubmit(outcomes);
  });
  form.append(btn);
  return form;
}

function renderConduct(view: TrialStateView): HTMLElement {
  const panel = el("section", "panel conduct");
  panel.append(el("h2", undefined, `Trial ${view.trial_id}`));

  if (view.complete) {
    panel.append(
      el("div", "banner", `Recommended MTC: ${armName(view.recommendation)}`),
    );
  } else {
    panel.append(
      el(
        "p",
        "status",
        `cohort ${view.cohorts_recorded + 1} of ${view.cohorts_total} - ` +
          `next: ${armName(view.recommendation)} - ` +
          `${view.patients_remaining} patients remaining`,
      ),
    );
    panel.append(el("h3", undefined, "Record cohort"));
    panel.append(
      outcomeForm(view, "Commit", (outcomes) =>
        guarded(async () => {
          await api.recordCohort(view.trial_id, outcomes, freshKey("cohort"));
          state.whatIfResults = [];
          await refresh();
        }),
      ),
    );
    panel.append(el("h3", undefined, "What if?"));
    panel.append(
      outcomeForm(view, "Preview", (outcomes) =>
        guarded(async () => {
          const result = await api.whatIf(view.trial_id, outcomes);
          const label = Object.entries(outcomes)
            .map(([a, v]) => `${armName(Number(a))}=${v}`)
            .join(", ");
          state.whatIfResults.push({ label, view: result });
          render();
        }),
      ),
    );
    if (state.whatIfResults.length) {
      const box = el("div", "whatif-box");
      for (const w of state.whatIfResults) {
        box.append(
          el(
            "div",
            "whatif-result",
            `if ${w.label}: next ${armName(w.view.recommendation)} ` +
              `(ordering ${w.view.selected_ordering})`,
          ),
        );
      }
      panel.append(box);
    }
  }

  if (view.cohorts_recorded > 0) {
    const undoBtn = el("button", "danger", "Undo last cohort");
    undoBtn.addEventListener("click", () =>
      guarded(async () => {
        await api.undo(view.trial_id, freshKey("undo"));
        state.whatIfResults = [];
        await refresh();
      }),
    );
    panel.append(undoBtn);
  }
  return panel;
}

// -- diagnostics ------------------------------------------------------------

function renderHeatmap(view: TrialStateView): HTMLElement {
  const cfg = view.config as { rows?: number; cols?: number };
  const rows = cfg.rows ?? 3;
  const cols = cfg.cols ?? 3;
  const panel = el("section", "panel");
  panel.append(el("h2", undefined, "Toxicity estimates"));
  const table = el("table", "heatmap");
  for (const row of heatmapRows(view, rows, cols)) {
    const tr = el("tr");
    tr.append(el("th", undefined, `b${row[0].b}`));
    for (const cell of row) {
      const td = el("td", cell.recommended ? "cell recommended" : "cell");
      td.append(el("div", "dose", armName(cell.dose)));
      td.append(el("div", "est", formatProbability(cell.estimate)));
      td.append(el("div", "ci", formatInterval(cell.interval)));
      if (cell.estimate !== null) {
        td.style.background = `rgba(200, 40, 40, ${Math.min(cell.estimate, 1) * 0.6})`;
      }
      tr.append(td);
    }
    table.append(tr);
  }
  const footer = el("tr");
  footer.append(el("th"));
  for (let a = 1; a <= rows; a++) footer.append(el("th", undefined, `a${a}`));
  table.append(footer);
  panel.append(table);
  const soc = view.estimates["0"];
  if (soc !== null && soc !== undefined) {
    panel.append(
      el(
        "p",
        "soc-line",
        `SoC estimate ${formatProbability(soc)} ${formatInterval(view.intervals["0"] ?? null)}`,
      ),
    );
  }
  return panel;
}

function renderOrderings(view: TrialStateView): HTMLElement {
  const panel = el("section", "panel");
  const kind = view.ordering_stat_kind === "aic" ? "AIC weights" : "posterior probabilities";
  panel.append(el("h2", undefined, `Orderings (${kind})`));
  const chart = el("div", "bars");
  const bars = orderingBars(view);
  const max = Math.max(...bars.map((b) => b.value), 1e-12);
  for (const bar of bars) {
    const col = el("div", bar.selected ? "bar selected" : "bar");
    const fill = el("div", "bar-fill");
    fill.style.height = `${Math.round((100 * bar.value) / max)}%`;
    col.append(fill, el("span", "bar-label", String(bar.ordering)));
    col.title = bar.value.toFixed(4);
    chart.append(col);
  }
  panel.append(chart);
  return panel;
}

function renderTimeline(view: TrialStateView): HTMLElement {
  const panel = el("section", "panel");
  panel.append(el("h2", undefined, "Allocation history"));
  const list = el("ol", "timeline");
  for (const entry of allocationTimeline(view.history)) {
    list.append(
      el(
        "li",
        undefined,
        `${entry.label} -> ${entry.dlts}/${entry.patients} DLTs, ` +
          `next ${armName(entry.recommendation)}`,
      ),
    );
  }
  panel.append(list);
  return panel;
}

// -- top level --------------------------------------------------------------

function render(): void {
  if (!root) return;
  root.replaceChildren();
  if (state.toast) root.append(el("div", "toast", state.toast));
  const left = el("div", "column");
  left.append(renderWizard());
  const main = el("div", "column wide");
  if (state.view) {
    main.append(renderConduct(state.view));
    main.append(renderHeatmap(state.view));
    main.append(renderOrderings(state.view));
    main.append(renderTimeline(state.view));
  } else {
    main.append(el("section", "panel", "Create or select a trial to begin."));
  }
  root.append(left, main);
  void renderTrialList(left).catch(() => undefined);
}

render();
