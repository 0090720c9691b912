"""Operational-prior calibration: exhaustive grid search and the CI-gated
cyclic coordinate search, plus the trade-off scores used to compare
confidence levels and scenario subsets.

The objective is the geometric mean of the per-scenario probabilities of
correct selection (PCS), estimated by Monte Carlo with common random numbers
across hyperparameter settings.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm

from .engine import POBLRM, POCRM, TrialConfig, run_oc
from .modelprior import NormalPrior, Skeleton

__all__ = [
    "CalibrationError",
    "ParameterGrid",
    "TraceEntry",
    "CalibrationTrace",
    "default_grid",
    "geometric_mean_pcs",
    "pcs_ci",
    "config_from_omega",
    "cyclic_calibrate",
    "grid_search",
    "alpha_score",
    "scenario_subset_score",
]

PCS_FLOOR = 1e-4

AXES_POBLRM = ("p1", "nu", "mu1", "mu2", "sigma1", "sigma2")
AXES_POCRM = ("p1", "nu", "sigma")


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ParameterGrid:
    """Named candidate values per hyperparameter axis, in sweep order."""

    design: str
    axes: tuple[tuple[str, tuple[float, ...]], ...]

    def __post_init__(self):
        expected = AXES_POBLRM if self.design == POBLRM else AXES_POCRM
        names = tuple(name for name, _ in self.axes)
        if names != expected:
            raise CalibrationError(f"axes must be {expected} in order, got {names}")
        for name, values in self.axes:
            if not values:
                raise CalibrationError(f"axis {name} is empty")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.axes)

    def values(self, name: str) -> tuple[float, ...]:
        return dict(self.axes)[name]

    @property
    def size(self) -> int:
        return math.prod(len(v) for _, v in self.axes)

    def points(self):
        for combo in itertools.product(*(v for _, v in self.axes)):
            yield dict(zip(self.names, combo))


# candidate values used throughout for the 3x3 calibration study
_P_SET = (0.01, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3)
_V_SET = (0.01, 0.05, 0.1, 0.15)
_M_SET = (-1.0, 0.0, 1.0, 2.0, 3.0, 4.0)
_S_SET = (0.5, 1.0, 2.0, 5.0, 10.0)


def default_grid(design: str) -> ParameterGrid:
    if design == POBLRM:
        return ParameterGrid(
            design,
            (
                ("p1", _P_SET),
                ("nu", _V_SET),
                ("mu1", _M_SET),
                ("mu2", _M_SET),
                ("sigma1", _S_SET),
                ("sigma2", _S_SET),
            ),
        )
    if design == POCRM:
        return ParameterGrid(design, (("p1", _P_SET), ("nu", _V_SET), ("sigma", _S_SET)))
    raise CalibrationError(f"unknown design {design!r}")


def geometric_mean_pcs(values) -> float:
    """Geometric mean with each entry floored at 1e-4, so one catastrophic
    scenario penalizes without annihilating the objective."""
    vals = list(values)
    if not vals:
        raise ValueError("need at least one PCS value")
    if any(not 0.0 <= v <= 1.0 for v in vals):
        raise ValueError("PCS values must lie in [0, 1]")
    return float(np.exp(np.mean(np.log(np.maximum(vals, PCS_FLOOR)))))


def pcs_ci(pcs: float, B: int, alpha: float, formula: str = "wald"):
    """Binomial confidence interval for an estimated PCS, clipped to [0, 1].

    ``formula="paper"`` divides the variance (not its root) by sqrt(B), the
    literal expression some write-ups use; it is narrower and therefore a
    stricter acceptance gate.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if B < 1:
        raise ValueError("B must be at least 1")
    z = norm.ppf(1.0 - alpha / 2.0)
    if formula == "wald":
        hw = z * math.sqrt(pcs * (1.0 - pcs) / B)
    elif formula == "paper":
        hw = z * pcs * (1.0 - pcs) / math.sqrt(B)
    else:
        raise ValueError(f"unknown CI formula {formula!r}")
    return (max(pcs - hw, 0.0), min(pcs + hw, 1.0))


def config_from_omega(template: TrialConfig, omega: dict) -> TrialConfig | None:
    """Instantiate a trial config at one grid point; None when infeasible
    (equal-spaced skeleton exceeding 1)."""
    k = template.rows * template.cols
    try:
        Skeleton.equal_spaced(omega["p1"], omega["nu"], k)
    except ValueError:
        return None
    if template.design == POBLRM:
        prior = NormalPrior(
            mu1=omega["mu1"],
            mu2=omega["mu2"],
            sigma1=omega["sigma1"],
            sigma2=omega["sigma2"],
        )
        return replace(
            template,
            skeleton_p1=omega["p1"],
            skeleton_nu=omega["nu"],
            skeleton_values=None,
            prior=prior,
            pseudo_override=None,
        )
    return replace(
        template,
        skeleton_p1=omega["p1"],
        skeleton_nu=omega["nu"],
        skeleton_values=None,
        crm_sigma=omega["sigma"],
    )


@dataclass
class TraceEntry:
    omega: dict
    per_scenario_pcs: tuple[float, ...]
    gm: float
    ci: tuple[float, float]
    accepted: bool
    cycle: int
    axis: str


@dataclass
class CalibrationTrace:
    entries: list[TraceEntry] = field(default_factory=list)
    n_configs: int = 0
    n_simulations: int = 0
    cycles: int = 0

    def accepted_path(self) -> list[TraceEntry]:
        return [e for e in self.entries if e.accepted]


class _Evaluator:
    """Caches one PCS estimate per distinct omega; common random numbers via
    a shared simulation seed."""

    def __init__(self, template, scenarios, B, alpha, seed, formula, threads, trace):
        self.template = template
        self.scenarios = scenarios
        self.B = B
        self.alpha = alpha
        self.seed = seed
        self.formula = formula
        self.threads = threads
        self.trace = trace
        self.cache: dict[tuple, TraceEntry] = {}

    @staticmethod
    def key(omega: dict) -> tuple:
        return tuple(sorted(omega.items()))

    def evaluate(self, omega: dict, cycle: int, axis: str) -> TraceEntry | None:
        key = self.key(omega)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        config = config_from_omega(self.template, omega)
        if config is None:
            return None
        pcs = tuple(
            run_oc(config, sc, self.B, seed=self.seed, threads=self.threads).pcs
            for sc in self.scenarios
        )
        gm = geometric_mean_pcs(pcs)
        entry = TraceEntry(
            omega=dict(omega),
            per_scenario_pcs=pcs,
            gm=gm,
            ci=pcs_ci(gm, self.B, self.alpha, self.formula),
            accepted=False,
            cycle=cycle,
            axis=axis,
        )
        self.cache[key] = entry
        self.trace.entries.append(entry)
        self.trace.n_configs += 1
        self.trace.n_simulations += self.B * len(self.scenarios)
        return entry


def _random_start(grid: ParameterGrid, template, rng) -> dict:
    for _ in range(1000):
        omega = {name: values[rng.integers(len(values))] for name, values in grid.axes}
        if config_from_omega(template, omega) is not None:
            return omega
    for omega in grid.points():  # fall back to the first feasible point
        if config_from_omega(template, omega) is not None:
            return omega
    raise CalibrationError("every grid point is infeasible")


def cyclic_calibrate(
    grid: ParameterGrid,
    scenarios,
    template: TrialConfig,
    B: int,
    alpha: float = 0.05,
    seed: int = 0,
    start: dict | None = None,
    ci_formula: str = "wald",
    threads: int = 1,
) -> tuple[dict, CalibrationTrace]:
    """CI-gated cyclic coordinate search over the hyperparameter grid.

    Sweeps the axes in their listed order; on each axis the best candidate by
    point estimate replaces the incumbent only when the incumbent's upper
    confidence bound falls below the candidate's lower bound.  Stops after a
    full cycle with no accepted update, or if an incumbent would repeat.
    """
    if not scenarios:
        raise CalibrationError("need at least one scenario")
    if grid.design != template.design:
        raise CalibrationError("grid and config template disagree on the design")
    trace = CalibrationTrace()
    ev = _Evaluator(template, scenarios, B, alpha, seed, ci_formula, threads, trace)
    if start is not None:
        omega = dict(start)
        if set(omega) != set(grid.names):
            raise CalibrationError("start point does not match the grid axes")
        if config_from_omega(template, omega) is None:
            raise CalibrationError("start point is infeasible")
    else:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 17])))
        omega = _random_start(grid, template, rng)

    incumbent = ev.evaluate(omega, 0, "start")
    incumbent.accepted = True
    visited = {ev.key(omega)}
    while True:
        trace.cycles += 1
        improved = False
        for axis in grid.names:
            best = None
            for value in grid.values(axis):
                cand = dict(incumbent.omega)
                cand[axis] = value
                entry = ev.evaluate(cand, trace.cycles, axis)
                if entry is None:
                    continue
                if best is None or entry.gm > best.gm:
                    best = entry
            if best is None or best is incumbent:
                continue
            if incumbent.ci[1] < best.ci[0]:
                key = ev.key(best.omega)
                if key in visited:
                    # Algorithm 2 halts rather than revisit an incumbent
                    return incumbent.omega, trace
                visited.add(key)
                best.accepted = True
                incumbent = best
                improved = True
        if not improved:
            return incumbent.omega, trace


def grid_search(
    grid: ParameterGrid,
    scenarios,
    template: TrialConfig,
    B: int,
    seed: int = 0,
    alpha: float = 0.05,
    ci_formula: str = "wald",
    threads: int = 1,
) -> tuple[dict, CalibrationTrace]:
    """Exhaustive evaluation of every feasible grid point; argmax geometric
    mean, ties to the first point in product order."""
    if not scenarios:
        raise CalibrationError("need at least one scenario")
    trace = CalibrationTrace()
    ev = _Evaluator(template, scenarios, B, alpha, seed, ci_formula, threads, trace)
    best = None
    for omega in grid.points():
        entry = ev.evaluate(omega, 0, "grid")
        if entry is None:
            continue
        if best is None or entry.gm > best.gm:
            best = entry
    if best is None:
        raise CalibrationError("every grid point is infeasible")
    best.accepted = True
    trace.cycles = 1
    return best.omega, trace


def alpha_score(
    pcs_alpha: float, pcs_0: float, t_alpha: float, t_min: float, lam: float
) -> float:
    """Trade-off between PCS gain and evaluation cost across confidence
    levels; cost T is measured in configurations evaluated."""
    if pcs_0 <= 0 or t_min <= 0:
        raise ValueError("baseline PCS and cost must be positive")
    return (pcs_alpha - pcs_0) / pcs_0 - lam * (t_alpha - t_min) / t_min


def scenario_subset_score(
    pcs_scen: float, pcs_0: float, t_scen: float, t_min: float, xi: float
) -> float:
    """Same functional form as alpha_score, comparing scenario subsets."""
    return alpha_score(pcs_scen, pcs_0, t_scen, t_min, xi)
