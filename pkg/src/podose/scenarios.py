"""True-toxicity scenarios: generation, the bundled 3x3 set, and the
complete-information benchmark used to rank scenario difficulty.

A scenario is a toxicity surface over the dose grid (dose-indexed, row-major)
plus an optional standard-of-care toxicity for randomised designs.  The
correct-selection set is derived by the closest-to-target rule over the
candidate arms (SoC included when randomised).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .lattice import DoseGrid, build_grid

__all__ = [
    "Scenario",
    "full_scenario_set",
    "bundled_scenarios",
    "benchmark_pcs",
    "select_subset",
    "SUBSET_METHODS",
]

SOC_ARM = 0  # arm id of the standard of care; doses are 1..k


@dataclass(frozen=True)
class Scenario:
    label: str
    grid: DoseGrid
    tox: tuple[float, ...]  # dose-indexed, row-major
    ttl: float
    soc_tox: float | None = None
    mtc_override: tuple[int, ...] | None = None

    def __post_init__(self):
        if len(self.tox) != self.grid.k:
            raise ValueError("toxicity vector does not match grid size")
        if any(not 0.0 < t <= 1.0 for t in self.tox):
            raise ValueError("toxicities must lie in (0, 1]")
        for i in range(1, self.grid.k + 1):
            for j in range(1, self.grid.k + 1):
                if self.grid.leq(i, j) and self.tox[i - 1] > self.tox[j - 1] + 1e-12:
                    raise ValueError(
                        f"scenario {self.label}: toxicity not monotone (d{i} > d{j})"
                    )

    def correct_arms(self, randomised: bool = False) -> tuple[int, ...]:
        """Arms whose true toxicity is closest to the target level."""
        arms: list[int] = []
        dists: list[float] = []
        if randomised:
            if self.soc_tox is None:
                raise ValueError(f"scenario {self.label} has no SoC toxicity")
            arms.append(SOC_ARM)
            dists.append(abs(self.soc_tox - self.ttl))
        for i in range(1, self.grid.k + 1):
            arms.append(i)
            dists.append(abs(self.tox[i - 1] - self.ttl))
        best = min(dists)
        return tuple(a for a, dd in zip(arms, dists) if dd <= best + 1e-12)

    @property
    def mtc_set(self) -> tuple[int, ...]:
        """Dose-level correct set (no SoC), honoring an explicit override."""
        if self.mtc_override is not None:
            return self.mtc_override
        return self.correct_arms(randomised=False)

    def overdose_doses(self) -> tuple[int, ...]:
        return tuple(
            i for i in range(1, self.grid.k + 1) if self.tox[i - 1] > self.ttl + 1e-12
        )

    def to_dict(self) -> dict:
        out = {
            "label": self.label,
            "grid": {"r": self.grid.r, "c": self.grid.c},
            "ttl": self.ttl,
            "tox": list(self.tox),
        }
        if self.soc_tox is not None:
            out["soc_tox"] = self.soc_tox
        if self.mtc_override is not None:
            out["mtc"] = list(self.mtc_override)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        return cls(
            label=str(data["label"]),
            grid=build_grid(data["grid"]["r"], data["grid"]["c"]),
            tox=tuple(float(x) for x in data["tox"]),
            ttl=float(data["ttl"]),
            soc_tox=float(data["soc_tox"]) if data.get("soc_tox") is not None else None,
            mtc_override=tuple(data["mtc"]) if data.get("mtc") else None,
        )


def _antichains(grid: DoseGrid) -> list[tuple[int, ...]]:
    doses = range(1, grid.k + 1)
    out = []
    for size in range(grid.k + 1):
        for combo in itertools.combinations(doses, size):
            if all(
                not grid.comparable(i, j) for i, j in itertools.combinations(combo, 2)
            ):
                out.append(combo)
    return out


def full_scenario_set(grid: DoseGrid, ttl: float, step: float = 0.10) -> list[Scenario]:
    """One scenario per antichain of the grid poset (empty antichain = no MTC).

    MTC doses sit at the target level; the rest of the surface moves away in
    integer multiples of ``step``, clipped to (0.01, 0.99).  Scenarios are
    ordered by MTC-set size then lexicographically, and labeled 1..count.
    """
    if not 0.0 < step < ttl:
        raise ValueError("step must lie in (0, ttl)")
    if grid.k > 16:
        raise ValueError("antichain enumeration capped at 16 combinations")
    coords = {i: grid.coords(i) for i in range(1, grid.k + 1)}
    scenarios = []
    chains = sorted(_antichains(grid), key=lambda a: (len(a), a))
    for num, anti in enumerate(chains, start=1):
        offsets = np.empty(grid.k)
        if not anti:
            # no MTC: everything sits above the target
            for i, (a, b) in coords.items():
                offsets[i - 1] = a + b - 1
        else:
            acoords = [coords[i] for i in anti]
            for i, (a, b) in coords.items():
                up = min((a - x) * (a > x) + (b - y) * (b > y) for x, y in acoords)
                down = min((x - a) * (x > a) + (y - b) * (y > b) for x, y in acoords)
                h = up - down
                if h == 0 and i not in anti:
                    h = 1  # incomparable to every MTC; push just above target
                offsets[i - 1] = h
        tox = np.clip(ttl + step * offsets, 0.01, 0.99)
        scn = Scenario(
            label=str(num), grid=grid, tox=tuple(float(t) for t in tox), ttl=ttl
        )
        if anti and set(scn.mtc_set) != set(anti):
            raise AssertionError(
                f"generated scenario {num}: correct set {scn.mtc_set} != {anti}"
            )
        scenarios.append(scn)
    return scenarios


# ---------------------------------------------------------------------------
# The bundled 3x3 set: 20 surfaces (TTL 0.3) with SoC toxicities for the
# randomised setting.  Row-major dose order d1..d9 (bottom row first).
_BUNDLED_TOX = [
    (0.40, 0.45, 0.60, 0.50, 0.60, 0.70, 0.60, 0.70, 0.80),
    (0.30, 0.40, 0.50, 0.40, 0.50, 0.65, 0.50, 0.60, 0.70),
    (0.20, 0.30, 0.50, 0.40, 0.50, 0.60, 0.50, 0.60, 0.70),
    (0.10, 0.20, 0.30, 0.20, 0.40, 0.50, 0.40, 0.50, 0.60),
    (0.20, 0.40, 0.50, 0.30, 0.50, 0.60, 0.50, 0.60, 0.70),
    (0.10, 0.15, 0.20, 0.20, 0.30, 0.50, 0.40, 0.50, 0.60),
    (0.10, 0.20, 0.25, 0.20, 0.25, 0.30, 0.40, 0.50, 0.60),
    (0.05, 0.10, 0.25, 0.10, 0.20, 0.40, 0.30, 0.50, 0.60),
    (0.05, 0.10, 0.40, 0.10, 0.20, 0.50, 0.20, 0.30, 0.60),
    (0.05, 0.15, 0.20, 0.15, 0.20, 0.25, 0.20, 0.25, 0.30),
    (0.20, 0.30, 0.50, 0.30, 0.40, 0.60, 0.40, 0.50, 0.70),
    (0.10, 0.30, 0.40, 0.20, 0.40, 0.50, 0.30, 0.50, 0.60),
    (0.10, 0.20, 0.30, 0.30, 0.40, 0.50, 0.40, 0.50, 0.60),
    (0.10, 0.20, 0.30, 0.20, 0.30, 0.40, 0.40, 0.50, 0.60),
    (0.05, 0.15, 0.30, 0.15, 0.20, 0.50, 0.30, 0.50, 0.60),
    (0.05, 0.10, 0.30, 0.10, 0.20, 0.40, 0.20, 0.30, 0.50),
    (0.10, 0.20, 0.40, 0.20, 0.30, 0.50, 0.30, 0.50, 0.60),
    (0.05, 0.15, 0.25, 0.15, 0.20, 0.30, 0.30, 0.50, 0.60),
    (0.05, 0.20, 0.25, 0.15, 0.25, 0.30, 0.25, 0.30, 0.40),
    (0.10, 0.20, 0.30, 0.20, 0.30, 0.50, 0.30, 0.40, 0.60),
]

_BUNDLED_SOC = (
    0.30, 0.15, 0.10, 0.05, 0.05, 0.05, 0.05, 0.01, 0.01, 0.01,
    0.05, 0.05, 0.05, 0.05, 0.01, 0.01, 0.05, 0.01, 0.01, 0.05,
)

_BUNDLED_MTC = [
    (1,),        # scenario 1: no dose at target; d1 is nearest
    (1,), (2,), (3,), (4,), (5,), (6,), (7,), (8,), (9,),
    (2, 4), (2, 7), (3, 4), (3, 5), (3, 7), (3, 8), (5, 7), (6, 7), (6, 8),
    (3, 5, 7),
]


def bundled_scenarios(ttl: float = 0.30) -> list[Scenario]:
    """The 20 reference 3x3 scenarios with SoC toxicities attached."""
    grid = build_grid(3, 3)
    return [
        Scenario(
            label=str(i + 1),
            grid=grid,
            tox=_BUNDLED_TOX[i],
            ttl=ttl,
            soc_tox=_BUNDLED_SOC[i],
            mtc_override=_BUNDLED_MTC[i],
        )
        for i in range(20)
    ]


# reference working-model settings for the model-based benchmark selectors;
# the envelope only needs representative members of each model family
_BENCH_P1 = 0.1
_BENCH_NU = 0.05
_BENCH_SIGMA = 0.5
_BENCH_NODES = 201


def _power_selector_hits(pbar, n, orderings, skeleton, ttl, correct) -> int:
    """Vectorized power-model fit on complete profiles, per candidate
    ordering; ordering picked by marginal likelihood, dose closest to
    target.  Mirrors the working-model estimate (posterior mean exponent)."""
    from .lattice import permute_skeleton

    B, k = pbar.shape
    agrid = np.linspace(-8 * _BENCH_SIGMA, 8 * _BENCH_SIGMA, _BENCH_NODES)
    logprior = -0.5 * (agrid / _BENCH_SIGMA) ** 2
    w = np.ones(_BENCH_NODES)
    w[0] = w[-1] = 0.5
    y = pbar * n
    miss = n - y
    alpha_sets = np.stack([permute_skeleton(skeleton, o) for o in orderings])
    best_lm = np.full(B, -np.inf)
    best_idx = np.zeros(B, dtype=int)
    best_ahat = np.zeros(B)
    for m, alphas in enumerate(alpha_sets):
        # log p and log(1-p) per (dose, exponent node) are data independent
        lp = np.exp(agrid)[None, :] * np.log(alphas)[:, None]
        l1m = np.log1p(-np.minimum(np.exp(lp), 1 - 1e-12))
        logjoint = y @ lp + miss @ l1m + logprior[None, :]
        peak = logjoint.max(axis=1)
        dens = w[None, :] * np.exp(logjoint - peak[:, None])
        norm = dens.sum(axis=1)
        logml = peak + np.log(norm)
        ahat = (dens * agrid[None, :]).sum(axis=1) / norm
        better = logml > best_lm
        best_lm[better] = logml[better]
        best_idx[better] = m
        best_ahat[better] = ahat[better]
    phat = alpha_sets[best_idx] ** np.exp(best_ahat)[:, None]
    sel = np.argmin(np.abs(phat - ttl), axis=1)
    return sum(1 for s in sel if s in correct)


def _logistic_selector_hits(pbar, n, orderings, ttl, correct) -> int:
    """Two-parameter logistic fit on ordering rank, ordering picked by AIC."""
    from .inference import InferenceError, select_ordering_aic

    k = pbar.shape[1]
    level_sets = []
    for o in orderings:
        pos = np.empty(k)
        for r, dose in enumerate(o):
            pos[dose - 1] = (r - (k - 1) / 2.0) / 2.0
        level_sets.append(pos)
    nvec = np.full(k, float(n))
    hits = 0
    for row in pbar:
        y = row * n
        try:
            idx, fits = select_ordering_aic(level_sets, y, nvec)
        except InferenceError:
            continue  # degenerate profile (all 0 or all 1); no sane fit
        fit = fits[idx]
        phat = 1.0 / (1.0 + np.exp(-(fit.theta1 + fit.theta2 * level_sets[idx])))
        if int(np.argmin(np.abs(phat - ttl))) in correct:
            hits += 1
    return hits


def benchmark_pcs(scenario: Scenario, n: int, B: int, seed: int = 0) -> float:
    """Complete-information benchmark PCS (an upper bound in practice).

    Each replication draws one latent uniform per patient, shared across
    doses, so the full toxicity profile of every patient is observed at all
    doses.  Five selectors consume the profiles: the model-free
    closest-to-target rule under both tie-break conventions (conservative and
    anti-conservative; shared profiles give identical means to equal-toxicity
    doses, so ties are structural, not incidental), a guarded rule taking the
    highest dose whose mean stays within one patient of target, and
    complete-information fits of the two working-model families (power and
    logistic, ordering picked within each).  The reported PCS is the best of
    the five; no one selector dominates the adaptive designs on every surface
    shape, the envelope does.
    """
    if n < 1 or B < 1:
        raise ValueError("n and B must be positive")
    from .lattice import standard_orderings
    from .modelprior import Skeleton

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 9281])))
    tox = np.asarray(scenario.tox)
    correct = {i - 1 for i in scenario.mtc_set}
    orderings = standard_orderings(scenario.grid)
    skeleton = Skeleton.equal_spaced(_BENCH_P1, _BENCH_NU, scenario.grid.k).values
    hits = np.zeros(5)
    k = scenario.grid.k
    chunk = max(1, min(B, 200_000 // max(n, 1)))
    done = 0
    while done < B:
        b = min(chunk, B - done)
        u = rng.random((b, n))
        pbar = (u[:, :, None] <= tox[None, None, :]).mean(axis=1)
        err = np.abs(pbar - scenario.ttl)
        # conservative tie-break: argmin returns the lowest dose index
        hits[0] += sum(1 for s in np.argmin(err, axis=1) if s in correct)
        # anti-conservative twin: highest dose among the structurally tied
        sel_hi = k - 1 - np.argmin(err[:, ::-1], axis=1)
        hits[1] += sum(1 for s in sel_hi if s in correct)
        # guarded rule: highest dose within one patient of target, else lowest
        ok = pbar <= scenario.ttl + 1.0 / n
        sel_g = np.where(ok.any(axis=1), k - 1 - np.argmax(ok[:, ::-1], axis=1), 0)
        hits[2] += sum(1 for s in sel_g if s in correct)
        hits[3] += _power_selector_hits(
            pbar, n, orderings, skeleton, scenario.ttl, correct
        )
        hits[4] += _logistic_selector_hits(pbar, n, orderings, scenario.ttl, correct)
        done += b
    return float(hits.max() / B)


SUBSET_METHODS = ("full", "pos2", "pos4", "pos5", "ben2", "ben4")

_POSITION_SUBSETS = {
    "pos2": ("2", "10"),
    "pos4": ("2", "11", "19", "10"),
    "pos5": ("2", "11", "20", "19", "10"),
}


def select_subset(
    method: str,
    scenarios: list[Scenario],
    benchmark: dict[str, float] | None = None,
) -> list[Scenario]:
    """Pick the calibration scenario subset by position or benchmark difficulty."""
    method = method.lower()
    by_label = {s.label: s for s in scenarios}
    if method == "full":
        return list(scenarios)
    if method in _POSITION_SUBSETS:
        missing = [l for l in _POSITION_SUBSETS[method] if l not in by_label]
        if missing:
            raise ValueError(f"subset {method} needs scenarios {missing}")
        return [by_label[l] for l in _POSITION_SUBSETS[method]]
    if method in ("ben2", "ben4"):
        if benchmark is None:
            raise ValueError(f"subset {method} requires benchmark PCS per scenario")
        # ties in benchmark PCS break toward the lower scenario id
        take = 1 if method == "ben2" else 2
        low = sorted(scenarios, key=lambda s: (benchmark[s.label], int(s.label)))[:take]
        high = sorted(scenarios, key=lambda s: (-benchmark[s.label], int(s.label)))[:take]
        return low + list(reversed(high))
    raise ValueError(f"unknown subset method {method!r}")


def load_scenarios(path) -> list[Scenario]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    items = data["scenarios"] if isinstance(data, dict) else data
    return [Scenario.from_dict(d) for d in items]


def dump_scenarios(scenarios: list[Scenario], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"scenarios": [s.to_dict() for s in scenarios]}, fh, indent=2)
