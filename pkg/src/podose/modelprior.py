"""Dose-toxicity working models, priors, and the normal-to-pseudo matching.

Two hyperparameter families describe the two-parameter logistic model
``logit(p) = theta1 + theta2 * d``:

* :class:`NormalPrior` -- ``(theta1, log theta2)`` bivariate normal with a
  diagonal covariance.
* :class:`PseudoPrior` -- two fractional phantom cohorts at the lowest and
  highest standardized dose, acting as augmented data.

The matching minimizes a Monte Carlo estimate of KL(normal || pseudo) over
the pseudo hyperparameters, with the pseudo density normalized by trapezoid
quadrature over ``(theta1, log theta2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit, logit

from . import _kernels

__all__ = [
    "LogisticParams",
    "NormalPrior",
    "PseudoPrior",
    "Skeleton",
    "MatchResult",
    "prior_point_estimates",
    "standardize_doses",
    "logistic_prob",
    "power_prob",
    "pseudo_prior_logdensity",
    "kl_normal_vs_pseudo",
    "match_prior_kl",
]


@dataclass(frozen=True)
class LogisticParams:
    theta1: float
    theta2: float

    def __post_init__(self):
        if not self.theta2 > 0:
            raise ValueError("theta2 must be positive")


@dataclass(frozen=True)
class NormalPrior:
    """Mean/sd of (theta1, log theta2), independent components."""

    mu1: float
    mu2: float
    sigma1: float
    sigma2: float

    def __post_init__(self):
        if self.sigma1 <= 0 or self.sigma2 <= 0:
            raise ValueError("prior standard deviations must be positive")


@dataclass(frozen=True)
class PseudoPrior:
    """Fractional pseudo cohorts (events, size) at d_1 and d_k.

    Attribute names follow the convention that ``lo`` is the phantom cohort
    at the lowest combination and ``hi`` at the highest; none of the numbers
    needs to be an integer.
    """

    y_lo: float
    n_lo: float
    y_hi: float
    n_hi: float

    def __post_init__(self):
        for y, n in ((self.y_lo, self.n_lo), (self.y_hi, self.n_hi)):
            if not (0.0 < y < n):
                raise ValueError("pseudo events must satisfy 0 < y < n")

    @property
    def u_lo(self) -> float:
        return self.n_lo - self.y_lo

    @property
    def u_hi(self) -> float:
        return self.n_hi - self.y_hi

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.y_lo, self.n_lo, self.y_hi, self.n_hi)


@dataclass(frozen=True)
class Skeleton:
    """Prior toxicity probabilities per combination, strictly increasing."""

    values: tuple[float, ...]

    def __post_init__(self):
        v = self.values
        if any(not 0.0 < x < 1.0 for x in v):
            raise ValueError("skeleton values must lie in (0, 1)")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("skeleton values must be strictly increasing")

    @classmethod
    def equal_spaced(cls, p1: float, nu: float, k: int) -> "Skeleton":
        top = p1 + (k - 1) * nu
        if top >= 1.0:
            raise ValueError(
                f"equal-spaced skeleton infeasible: p1 + (k-1)*nu = {top:.3f} >= 1"
            )
        return cls(tuple(p1 + i * nu for i in range(k)))

    @property
    def k(self) -> int:
        return len(self.values)


def prior_point_estimates(prior: NormalPrior) -> tuple[float, float]:
    """Prior point estimates (theta1, theta2): mean of theta1 and of the
    lognormal theta2."""
    return prior.mu1, math.exp(prior.mu2 + prior.sigma2**2 / 2.0)


def standardize_doses(skeleton: Skeleton, theta_hat: tuple[float, float]) -> np.ndarray:
    """Standardized dose levels d_i = (logit(p_i) - t1) / t2, strictly increasing."""
    t1, t2 = theta_hat
    if not t2 > 0:
        raise ValueError("theta2 point estimate must be positive")
    return (logit(np.asarray(skeleton.values, dtype=float)) - t1) / t2


def logistic_prob(d, theta: LogisticParams):
    return expit(theta.theta1 + theta.theta2 * np.asarray(d, dtype=float))


def power_prob(alpha, a: float):
    """One-parameter power model alpha ** exp(a); equals alpha at a = 0."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0.0) or np.any(alpha >= 1.0):
        raise ValueError("skeleton probability must lie in (0, 1)")
    return alpha ** math.exp(a)


def pseudo_prior_logdensity(
    theta: LogisticParams, pp: PseudoPrior, d_lo: float, d_hi: float
) -> float:
    """Unnormalized log density of the pseudo prior at theta.

    This is the literal likelihood-augmentation form: two binomial kernels at
    the extreme standardized doses, no change-of-variables Jacobian.
    """
    out = 0.0
    for d, y, u in ((d_lo, pp.y_lo, pp.u_lo), (d_hi, pp.y_hi, pp.u_hi)):
        eta = theta.theta1 + theta.theta2 * d
        out += y * log_expit(eta) + u * log_expit(-eta)
    return float(out)


@dataclass(frozen=True)
class MatchResult:
    pseudo: PseudoPrior
    kl: float
    kl_se: float
    converged: bool


def _pseudo_logz(prior: NormalPrior, d_lo, d_hi, params, nodes: int) -> float:
    """Log normalizer of the pseudo density over (theta1, log theta2).

    Quadrature range is set by the normal prior, mean +/- 8 sd per axis.
    """
    y_lo, u_lo, y_hi, u_hi = params
    t1g = np.linspace(prior.mu1 - 8 * prior.sigma1, prior.mu1 + 8 * prior.sigma1, nodes)
    lt2g = np.linspace(prior.mu2 - 8 * prior.sigma2, prior.mu2 + 8 * prior.sigma2, nodes)
    grid = np.empty((nodes, nodes))
    _kernels.pseudo_logdensity_grid(t1g, lt2g, d_lo, d_hi, y_lo, u_lo, y_hi, u_hi, grid)
    mx = grid.max()
    w1 = np.ones(nodes)
    w1[0] = w1[-1] = 0.5
    z = float(np.einsum("i,j,ij->", w1, w1, np.exp(grid - mx)))
    h1 = t1g[1] - t1g[0]
    h2 = lt2g[1] - lt2g[0]
    logz = mx + math.log(z) + math.log(h1) + math.log(h2)
    if not math.isfinite(logz):
        raise FloatingPointError("pseudo-prior normalizer is not finite")
    return logz


def _kl_samples(prior: NormalPrior, d_lo, d_hi, params, theta1s, lt2s, nodes) -> np.ndarray:
    """Pointwise log pi_N - log pi_beta at prior samples (both over
    (theta1, log theta2))."""
    y_lo, u_lo, y_hi, u_hi = params
    logz = _pseudo_logz(prior, d_lo, d_hi, params, nodes)
    log_pn = (
        -0.5 * ((theta1s - prior.mu1) / prior.sigma1) ** 2
        - 0.5 * ((lt2s - prior.mu2) / prior.sigma2) ** 2
        - math.log(2 * math.pi * prior.sigma1 * prior.sigma2)
    )
    t2 = np.exp(lt2s)
    log_pb = np.zeros_like(theta1s)
    for d, y, u in ((d_lo, y_lo, u_lo), (d_hi, y_hi, u_hi)):
        eta = theta1s + t2 * d
        log_pb += y * log_expit(eta) + u * log_expit(-eta)
    return log_pn - (log_pb - logz)


def kl_normal_vs_pseudo(
    prior: NormalPrior,
    pp: PseudoPrior,
    d_lo: float,
    d_hi: float,
    mc_samples: int = 4000,
    seed: int = 0,
    quad_nodes: int = 201,
) -> tuple[float, float]:
    """Monte Carlo KL(normal || pseudo) and its standard error."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    t1s = rng.normal(prior.mu1, prior.sigma1, mc_samples)
    lt2s = rng.normal(prior.mu2, prior.sigma2, mc_samples)
    params = (pp.y_lo, pp.u_lo, pp.y_hi, pp.u_hi)
    vals = _kl_samples(prior, d_lo, d_hi, params, t1s, lt2s, quad_nodes)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(mc_samples))


def _moment_matched_start(prior, d, t1s, lt2s) -> tuple[float, float]:
    """Beta(y, u) moment match to the prior-implied toxicity at level d."""
    p = expit(t1s + np.exp(lt2s) * d)
    m = float(p.mean())
    v = float(p.var())
    v = min(max(v, 1e-6), m * (1 - m) * 0.99)
    s = m * (1 - m) / v - 1.0
    return max(m * s, 1e-3), max((1 - m) * s, 1e-3)


def match_prior_kl(
    prior: NormalPrior,
    dtilde,
    mc_samples: int = 4000,
    seed: int = 0,
    restarts: int = 5,
    quad_nodes: int = 201,
) -> MatchResult:
    """Find pseudo hyperparameters minimizing KL(normal prior || pseudo prior).

    Bounded derivative-free simplex search over log(y_lo, u_lo, y_hi, u_hi),
    restarted with jitter inside a half-width-0.5 log box around the
    moment-matched Beta start.  The box is essential: under the truncated
    normalizer the unconstrained objective drains to a degenerate corner
    (phantom event rates 0 and 1) that ruins the escalation behavior.
    Deterministic given ``seed``; common prior samples are reused across all
    evaluations.
    """
    dtilde = np.asarray(dtilde, dtype=float)
    if dtilde.shape[0] < 2:
        raise ValueError("need at least two standardized dose levels")
    if mc_samples < 1000:
        raise ValueError("mc_samples must be at least 1000")
    d_lo, d_hi = float(dtilde[0]), float(dtilde[-1])
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    t1s = rng.normal(prior.mu1, prior.sigma1, mc_samples)
    lt2s = rng.normal(prior.mu2, prior.sigma2, mc_samples)

    def objective(x):
        try:
            return float(
                _kl_samples(prior, d_lo, d_hi, tuple(np.exp(x)), t1s, lt2s, quad_nodes).mean()
            )
        except FloatingPointError:
            return 1e9

    y0_lo, u0_lo = _moment_matched_start(prior, d_lo, t1s, lt2s)
    y0_hi, u0_hi = _moment_matched_start(prior, d_hi, t1s, lt2s)
    base = np.log(np.array([y0_lo, u0_lo, y0_hi, u0_hi]))
    half_width = 0.5
    bounds = list(zip(base - half_width, base + half_width))

    best_x, best_val, any_converged = None, np.inf, False
    for r in range(restarts):
        x0 = (
            base
            if r == 0
            else np.clip(base + rng.normal(0.0, 0.3, 4), base - half_width, base + half_width)
        )
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            bounds=bounds,
            options={"xatol": 1e-4, "fatol": 1e-7, "maxiter": 600},
        )
        if res.fun < best_val:
            best_val, best_x = res.fun, res.x
        any_converged = any_converged or bool(res.success)

    y_lo, u_lo, y_hi, u_hi = np.exp(best_x)
    pp = PseudoPrior(y_lo=y_lo, n_lo=y_lo + u_lo, y_hi=y_hi, n_hi=y_hi + u_hi)
    kl, se = kl_normal_vs_pseudo(
        prior, pp, d_lo, d_hi, mc_samples=mc_samples, seed=seed, quad_nodes=quad_nodes
    )
    return MatchResult(pseudo=pp, kl=kl, kl_se=se, converged=any_converged)
