"""The escalation state machine and the Monte Carlo operating-characteristics
runner.

Both designs share one step function: select an ordering (AIC for the
two-parameter logistic design, posterior model probability for the power
model), estimate toxicity under the winner, and pick the candidate arm whose
estimate is closest to the target.  Arm 0 is the standard of care; doses are
1..k.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from . import inference
from .lattice import build_grid, permute_skeleton, standard_orderings, validate_linear_extension
from .modelprior import (
    NormalPrior,
    PseudoPrior,
    Skeleton,
    match_prior_kl,
    prior_point_estimates,
    standardize_doses,
)

__all__ = [
    "ConfigError",
    "TrialConfig",
    "TrialState",
    "TrialResult",
    "OperatingCharacteristics",
    "init_trial",
    "apply_cohort",
    "simulate_trial",
    "run_oc",
]

SOC_ARM = 0

POBLRM = "poblrm"
POCRM = "pocrm"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrialConfig:
    design: str
    rows: int = 3
    cols: int = 3
    ttl: float = 0.3
    n_cohorts: int = 15
    m1: int = 3
    m2: int = 0
    randomised: bool = False
    skeleton_p1: float | None = None
    skeleton_nu: float | None = None
    skeleton_values: tuple[float, ...] | None = None
    prior: NormalPrior | None = None
    crm_sigma: float | None = None
    soc_skeleton: float | None = None
    orderings: tuple[tuple[int, ...], ...] | None = None
    ordering_prior: tuple[float, ...] | None = None
    estimate_mode: str = "posterior-mean"  # or "mle"
    prior_mode: str = "pseudo"  # or "normal"
    # slope scale the pseudo-posterior's implied prior is flat on; "auto"
    # follows the design variant (theta2 plain, log-theta2 randomised)
    pseudo_measure: str = "auto"
    quad_nodes: int = 201
    kl_mc_samples: int = 4000
    kl_seed: int = 7
    # resolved pseudo hyperparameters; set by run_oc to avoid re-matching
    pseudo_override: tuple[float, float, float, float] | None = None

    def validate(self) -> None:
        if self.design not in (POBLRM, POCRM):
            raise ConfigError(f"unknown design {self.design!r}")
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("grid needs at least one level per agent")
        if self.n_cohorts < 1:
            raise ConfigError("need at least one cohort")
        if self.m1 < 1:
            raise ConfigError("m1 must be at least 1")
        if self.randomised and self.m2 < 1:
            raise ConfigError("randomised design needs m2 >= 1")
        if not self.randomised and self.m2 != 0:
            raise ConfigError("m2 must be 0 unless randomised")
        if not 0.0 < self.ttl < 1.0:
            raise ConfigError("target toxicity level must lie in (0, 1)")
        if self.skeleton_values is None and (
            self.skeleton_p1 is None or self.skeleton_nu is None
        ):
            raise ConfigError("supply skeleton_values or (skeleton_p1, skeleton_nu)")
        if self.design == POBLRM and self.prior is None:
            raise ConfigError("the logistic design needs a normal prior")
        if self.design == POCRM and (self.crm_sigma is None or self.crm_sigma <= 0):
            raise ConfigError("the power-model design needs a positive sigma")
        if self.estimate_mode not in ("posterior-mean", "mle"):
            raise ConfigError(f"unknown estimate mode {self.estimate_mode!r}")
        if self.prior_mode not in ("pseudo", "normal"):
            raise ConfigError(f"unknown prior mode {self.prior_mode!r}")
        if self.pseudo_measure not in ("auto", "theta2", "log-theta2"):
            raise ConfigError(f"unknown pseudo measure {self.pseudo_measure!r}")
        if self.quad_nodes < 21:
            raise ConfigError("quad_nodes too small for a stable trapezoid grid")
        # skeleton feasibility checked by construction in the context build

    @property
    def cohort_size(self) -> int:
        return self.m1 + self.m2


class _DesignContext:
    """Everything derived from a TrialConfig that is shared across cohorts."""

    def __init__(self, config: TrialConfig):
        config.validate()
        self.config = config
        self.grid = build_grid(config.rows, config.cols)
        k = self.grid.k
        if config.orderings is not None:
            self.orderings = [tuple(o) for o in config.orderings]
            for o in self.orderings:
                if not validate_linear_extension(self.grid, o):
                    raise ConfigError(f"ordering {o} violates the partial order")
        else:
            self.orderings = [tuple(o) for o in standard_orderings(self.grid)]
        S = len(self.orderings)
        if config.ordering_prior is not None:
            if len(config.ordering_prior) != S:
                raise ConfigError("ordering prior length mismatch")
            if not math.isclose(sum(config.ordering_prior), 1.0, abs_tol=1e-9):
                raise ConfigError("ordering prior must sum to 1")
            self.ordering_prior = np.asarray(config.ordering_prior, dtype=float)
        else:
            self.ordering_prior = np.full(S, 1.0 / S)

        if config.skeleton_values is not None:
            self.skeleton = Skeleton(tuple(config.skeleton_values))
            if self.skeleton.k != k:
                raise ConfigError("skeleton length does not match the grid")
        else:
            try:
                self.skeleton = Skeleton.equal_spaced(
                    config.skeleton_p1, config.skeleton_nu, k
                )
            except ValueError as exc:
                raise ConfigError(str(exc)) from None

        self.candidates = (
            tuple(range(0, k + 1)) if config.randomised else tuple(range(1, k + 1))
        )

        if config.design == POBLRM:
            if config.pseudo_measure == "auto":
                self.pseudo_measure = "log-theta2" if config.randomised else "theta2"
            else:
                self.pseudo_measure = config.pseudo_measure
            self.theta0 = prior_point_estimates(config.prior)
            dtilde = standardize_doses(self.skeleton, self.theta0)
            self.dtilde_sorted = dtilde
            # dose-indexed standardized levels per ordering (S x k)
            self.dlevels = np.array(
                [permute_skeleton(dtilde, o) for o in self.orderings]
            )
            # the AIC ordering step always needs the pseudo cohorts, even when
            # combination selection integrates against the normal prior
            if config.pseudo_override is not None:
                self.pseudo = PseudoPrior(*config.pseudo_override)
            else:
                self.pseudo = match_prior_kl(
                    config.prior,
                    dtilde,
                    mc_samples=config.kl_mc_samples,
                    seed=config.kl_seed,
                ).pseudo
            self.pseudo_levels = np.array([dtilde[0], dtilde[-1]])
            self.pseudo_y = np.array([self.pseudo.y_lo, self.pseudo.y_hi])
            self.pseudo_n = np.array([self.pseudo.n_lo, self.pseudo.n_hi])
            if config.randomised:
                # the control sits strictly below d1 on the standardized scale,
                # anchored by its own prior toxicity (default a fifth of p1)
                soc = (
                    config.soc_skeleton
                    if config.soc_skeleton is not None
                    else self.skeleton.values[0] / 5.0
                )
                if not 0.0 < soc < self.skeleton.values[0]:
                    raise ConfigError("SoC skeleton value must lie in (0, p1)")
                self.soc_level = float(
                    standardize_doses(Skeleton((soc, self.skeleton.values[0])), self.theta0)[0]
                )
            else:
                self.soc_level = 0.0
        else:
            self.alphas = np.array(
                [permute_skeleton(self.skeleton.values, o) for o in self.orderings]
            )
            if config.randomised:
                soc = (
                    config.soc_skeleton
                    if config.soc_skeleton is not None
                    else config.skeleton_p1 / 2.0
                    if config.skeleton_p1 is not None
                    else self.skeleton.values[0] / 2.0
                )
                if not 0.0 < soc < 1.0:
                    raise ConfigError("SoC skeleton value must lie in (0, 1)")
                self.soc_alpha = float(soc)
            else:
                self.soc_alpha = None


_CONTEXT_CACHE: dict[TrialConfig, _DesignContext] = {}


def get_context(config: TrialConfig) -> _DesignContext:
    ctx = _CONTEXT_CACHE.get(config)
    if ctx is None:
        ctx = _DesignContext(config)
        if len(_CONTEXT_CACHE) > 256:
            _CONTEXT_CACHE.clear()
        _CONTEXT_CACHE[config] = ctx
    return ctx


def resolve_pseudo(config: TrialConfig) -> TrialConfig:
    """Return a config with the matched pseudo prior pinned, so that workers
    and repeated simulations skip the KL optimization."""
    if config.design == POBLRM and config.pseudo_override is None:
        ctx = get_context(config)
        return replace(config, pseudo_override=ctx.pseudo.as_tuple())
    return config


@dataclass
class StepResult:
    selected_ordering: int
    phat: np.ndarray  # length k+1, index 0 = SoC (nan when non-randomised)
    next_arm: int
    ordering_stats: list  # AICs (poblrm) or posterior probabilities (pocrm)
    theta: tuple[float, float] | None = None
    a_hat: float | None = None
    intervals: dict[int, tuple[float, float]] | None = None


def _observed(y: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.nonzero(n > 0)[0]


def _step_poblrm(
    ctx: _DesignContext, y: np.ndarray, n: np.ndarray, intervals: bool = False
) -> StepResult:
    cfg = ctx.config
    arms = _observed(y, n)
    k = ctx.grid.k
    yy = y[arms]
    nn = n[arms]
    # ordering selection: pseudo cohorts + every observation (SoC at level 0)
    level_sets = []
    for s in range(len(ctx.orderings)):
        lv = np.where(
            arms == SOC_ARM, ctx.soc_level, ctx.dlevels[s][np.maximum(arms - 1, 0)]
        )
        level_sets.append(np.concatenate([ctx.pseudo_levels, lv]))
    ay = np.concatenate([ctx.pseudo_y, yy])
    an = np.concatenate([ctx.pseudo_n, nn])
    s_star, fits = inference.select_ordering_aic(level_sets, ay, an)

    post = None
    if cfg.estimate_mode == "mle":
        t1, t2 = fits[s_star].theta1, fits[s_star].theta2
    elif cfg.prior_mode == "pseudo":
        post = inference.posterior_quadrature_blrm(
            level_sets[s_star], ay, an, prior=None, nodes=cfg.quad_nodes,
            check_stability=intervals, measure=ctx.pseudo_measure,
        )
        t1, t2 = post.theta1, post.theta2
    else:
        post = inference.posterior_quadrature_blrm(
            level_sets[s_star][2:], yy, nn, prior=cfg.prior, nodes=cfg.quad_nodes,
            check_stability=intervals,
        )
        t1, t2 = post.theta1, post.theta2

    phat = np.empty(k + 1)
    phat[0] = expit(t1 + t2 * ctx.soc_level) if cfg.randomised else np.nan
    phat[1:] = expit(t1 + t2 * ctx.dlevels[s_star])
    nxt = inference.select_combination(phat, cfg.ttl, ctx.candidates)
    cis = None
    if intervals:
        if post is None:  # MLE mode still reports pseudo-posterior uncertainty
            post = inference.posterior_quadrature_blrm(
                level_sets[s_star], ay, an, prior=None, nodes=cfg.quad_nodes,
                check_stability=True, measure=ctx.pseudo_measure,
            )
        cis = {i: post.prob_interval(ctx.dlevels[s_star][i - 1]) for i in range(1, k + 1)}
        if cfg.randomised:
            cis[SOC_ARM] = post.prob_interval(ctx.soc_level)
    return StepResult(
        s_star, phat, nxt, [f.aic for f in fits], theta=(t1, t2), intervals=cis
    )


def _step_pocrm(
    ctx: _DesignContext, y: np.ndarray, n: np.ndarray, intervals: bool = False
) -> StepResult:
    cfg = ctx.config
    arms = _observed(y, n)
    k = ctx.grid.k
    yy = y[arms]
    nn = n[arms]
    posts = []
    logmls = np.empty(len(ctx.orderings))
    for s in range(len(ctx.orderings)):
        al = np.where(
            arms == SOC_ARM, ctx.soc_alpha or 0.5, ctx.alphas[s][np.maximum(arms - 1, 0)]
        )
        post = inference.posterior_quadrature_crm(
            al, yy, nn, cfg.crm_sigma, nodes=cfg.quad_nodes
        )
        posts.append(post)
        logmls[s] = post.log_marginal
    s_star, probs = inference.select_ordering_bayes(logmls, ctx.ordering_prior)
    ea = math.exp(posts[s_star].a_hat)
    phat = np.empty(k + 1)
    phat[0] = ctx.soc_alpha**ea if cfg.randomised else np.nan
    phat[1:] = ctx.alphas[s_star] ** ea
    nxt = inference.select_combination(phat, cfg.ttl, ctx.candidates)
    cis = None
    if intervals:
        cis = {
            i: posts[s_star].prob_interval(ctx.alphas[s_star][i - 1])
            for i in range(1, k + 1)
        }
        if cfg.randomised:
            cis[SOC_ARM] = posts[s_star].prob_interval(ctx.soc_alpha)
    return StepResult(
        s_star, phat, nxt, list(probs), a_hat=posts[s_star].a_hat, intervals=cis
    )


def recommend(
    config: TrialConfig, y: np.ndarray, n: np.ndarray, intervals: bool = False
) -> StepResult:
    """Next-arm recommendation from aggregated (events, sizes) per arm.

    ``intervals`` adds 95% credible intervals per arm (and turns on the
    quadrature stability check); simulation loops leave it off.
    """
    ctx = get_context(config)
    if config.design == POBLRM:
        return _step_poblrm(ctx, y, n, intervals)
    return _step_pocrm(ctx, y, n, intervals)


@dataclass
class CohortRecord:
    alloc: dict[int, int]
    dlts: dict[int, int]
    selected_ordering: int
    ordering_stats: list
    phat: list[float]
    recommendation: int


@dataclass
class TrialState:
    config: TrialConfig
    pending_alloc: dict[int, int]
    y: np.ndarray
    n: np.ndarray
    cohorts: list[CohortRecord] = field(default_factory=list)
    recommendation: int = 1

    @property
    def complete(self) -> bool:
        return len(self.cohorts) >= self.config.n_cohorts

    @property
    def patients_enrolled(self) -> int:
        return int(self.n.sum())

    def clone(self) -> "TrialState":
        return TrialState(
            config=self.config,
            pending_alloc=dict(self.pending_alloc),
            y=self.y.copy(),
            n=self.n.copy(),
            cohorts=list(self.cohorts),
            recommendation=self.recommendation,
        )


def _allocation_for(config: TrialConfig, arm: int) -> dict[int, int]:
    if config.randomised:
        alloc = {SOC_ARM: config.m2}
        alloc[arm] = alloc.get(arm, 0) + config.m1
        return alloc
    return {arm: config.m1}


def init_trial(config: TrialConfig) -> TrialState:
    """Fresh trial: first cohort goes to the lowest combination (plus the SoC
    split when randomised)."""
    config = resolve_pseudo(config)
    ctx = get_context(config)  # validates config, skeleton, orderings
    k = ctx.grid.k
    return TrialState(
        config=config,
        pending_alloc=_allocation_for(config, 1),
        y=np.zeros(k + 1),
        n=np.zeros(k + 1),
        recommendation=1,
    )


def apply_cohort(state: TrialState, dlts: dict[int, int]) -> TrialState:
    """Record one cohort's outcomes and recompute the recommendation.

    ``dlts`` maps arm id to the number of toxicities among that arm's pending
    allocation.  Returns a new state; the input is untouched.
    """
    if state.complete:
        raise ValueError("trial already complete")
    alloc = state.pending_alloc
    unknown = set(dlts) - set(alloc)
    if unknown:
        raise ValueError(f"outcomes for arms never allocated: {sorted(unknown)}")
    missing = set(alloc) - set(dlts)
    if missing:
        raise ValueError(f"missing outcomes for arms: {sorted(missing)}")
    for arm, cnt in dlts.items():
        if not 0 <= cnt <= alloc[arm]:
            raise ValueError(f"arm {arm}: {cnt} toxicities among {alloc[arm]} patients")
    new = state.clone()
    for arm, cnt in alloc.items():
        new.n[arm] += cnt
        new.y[arm] += dlts[arm]
    step = recommend(new.config, new.y, new.n)
    new.cohorts.append(
        CohortRecord(
            alloc=dict(alloc),
            dlts=dict(dlts),
            selected_ordering=step.selected_ordering,
            ordering_stats=step.ordering_stats,
            phat=[float(p) for p in step.phat],
            recommendation=step.next_arm,
        )
    )
    new.recommendation = step.next_arm
    new.pending_alloc = (
        {} if new.complete else _allocation_for(new.config, step.next_arm)
    )
    return new


@dataclass
class TrialResult:
    final_arm: int
    alloc: np.ndarray  # patients per arm, index 0 = SoC
    dlts: np.ndarray
    trace: tuple[tuple[int, int], ...]  # (allocated arm, recommendation) per cohort

    def __eq__(self, other):
        return (
            isinstance(other, TrialResult)
            and self.final_arm == other.final_arm
            and np.array_equal(self.alloc, other.alloc)
            and np.array_equal(self.dlts, other.dlts)
            and self.trace == other.trace
        )


def _rep_rng(seed: int, rep: int) -> np.random.Generator:
    # counter-based so replication r is reproducible independent of order
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, rep])))


def simulate_trial(config: TrialConfig, scenario, seed: int, rep: int = 0) -> TrialResult:
    """One full simulated trial; deterministic given (config, scenario, seed, rep)."""
    config = resolve_pseudo(config)
    ctx = get_context(config)
    k = ctx.grid.k
    if k != len(scenario.tox):
        raise ConfigError("scenario dimension does not match the grid")
    if config.randomised and scenario.soc_tox is None:
        raise ConfigError("randomised design needs a scenario SoC toxicity")
    rng = _rep_rng(seed, rep)
    tox = np.concatenate([[scenario.soc_tox or 0.0], scenario.tox])
    y = np.zeros(k + 1)
    n = np.zeros(k + 1)
    alloc_tot = np.zeros(k + 1)
    current = 1
    trace = []
    for _ in range(config.n_cohorts):
        alloc = _allocation_for(config, current)
        for arm, cnt in alloc.items():
            dlt = rng.binomial(cnt, tox[arm])
            y[arm] += dlt
            n[arm] += cnt
            alloc_tot[arm] += cnt
        step = recommend(config, y, n)
        trace.append((current, step.next_arm))
        current = step.next_arm
    return TrialResult(current, alloc_tot, y.copy(), tuple(trace))


@dataclass
class OperatingCharacteristics:
    design: str
    scenario_label: str
    B: int
    seed: int
    randomised: bool
    pcs: float
    selection: dict[int, float]  # arm -> proportion of final recommendations
    allocation: dict[int, float]  # arm -> proportion of patients
    overdose_alloc: float  # proportion of patients on arms above the target
    overdose_rec: float  # proportion of trials recommending an arm above target
    mean_dlts: float

    def to_dict(self) -> dict:
        return {
            "design": self.design,
            "scenario": self.scenario_label,
            "B": self.B,
            "seed": self.seed,
            "randomised": self.randomised,
            "pcs": self.pcs,
            "selection": {str(a): v for a, v in self.selection.items()},
            "allocation": {str(a): v for a, v in self.allocation.items()},
            "overdose_alloc": self.overdose_alloc,
            "overdose_rec": self.overdose_rec,
            "mean_dlts": self.mean_dlts,
        }


def _rep_block(args):
    config, scenario, seed, lo, hi = args
    k = config.rows * config.cols
    sel = np.zeros(k + 1)
    alloc = np.zeros(k + 1)
    dlts = 0.0
    for rep in range(lo, hi):
        res = simulate_trial(config, scenario, seed, rep)
        sel[res.final_arm] += 1
        alloc += res.alloc
        dlts += res.dlts.sum()
    return sel, alloc, dlts


def run_oc(
    config: TrialConfig,
    scenario,
    B: int,
    seed: int = 0,
    threads: int = 1,
) -> OperatingCharacteristics:
    """Aggregate B independent simulated trials into operating characteristics."""
    if B < 1:
        raise ValueError("B must be at least 1")
    config = resolve_pseudo(config)
    k = config.rows * config.cols
    if threads > 1 and B >= 2 * threads:
        bounds = np.linspace(0, B, threads + 1, dtype=int)
        jobs = [
            (config, scenario, seed, int(lo), int(hi))
            for lo, hi in zip(bounds[:-1], bounds[1:])
        ]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_rep_block, jobs))
        sel = sum(p[0] for p in parts)
        alloc = sum(p[1] for p in parts)
        dlts = sum(p[2] for p in parts)
    else:
        sel, alloc, dlts = _rep_block((config, scenario, seed, 0, B))

    correct = scenario.correct_arms(config.randomised)
    pcs = float(sum(sel[a] for a in correct) / B)
    total_pat = alloc.sum()
    over = set(scenario.overdose_doses())
    if config.randomised and scenario.soc_tox is not None and scenario.soc_tox > scenario.ttl + 1e-12:
        over.add(SOC_ARM)
    overdose_alloc = float(sum(alloc[a] for a in over) / total_pat)
    overdose_rec = float(sum(sel[a] for a in over) / B)
    arms = list(range(0, k + 1)) if config.randomised else list(range(1, k + 1))
    return OperatingCharacteristics(
        design=config.design,
        scenario_label=scenario.label,
        B=B,
        seed=seed,
        randomised=config.randomised,
        pcs=pcs,
        selection={a: float(sel[a] / B) for a in arms},
        allocation={a: float(alloc[a] / total_pat) for a in arms},
        overdose_alloc=overdose_alloc,
        overdose_rec=overdose_rec,
        mean_dlts=float(dlts / B),
    )
