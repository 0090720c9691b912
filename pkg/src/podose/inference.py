"""Posterior computation and model selection for the escalation designs.

The two-parameter logistic model is handled two ways: a fractional-weight
GLM fit (IRLS) used for AIC-based ordering selection and the fast plug-in
estimate mode, and a deterministic tensor-trapezoid quadrature over
``(theta1, log theta2)`` for posterior means.  The one-parameter power model
uses a 1-D quadrature over its exponent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import _kernels
from .modelprior import NormalPrior

__all__ = [
    "InferenceError",
    "QuadratureError",
    "GlmFit",
    "PosteriorGrid",
    "CrmPosterior",
    "fit_glm_fractional",
    "select_ordering_aic",
    "posterior_quadrature_blrm",
    "posterior_quadrature_crm",
    "select_ordering_bayes",
    "select_combination",
]


class InferenceError(RuntimeError):
    pass


class QuadratureError(InferenceError):
    pass


@dataclass(frozen=True)
class GlmFit:
    theta1: float
    theta2: float
    loglik: float
    aic: float
    converged: bool


def fit_glm_fractional(levels, y, n) -> GlmFit:
    """Logistic IRLS on fractional binomial data (levels, events, sizes).

    AIC uses two parameters.  A singular weighted design (all observations at
    a single level) raises; with the two pseudo anchors present this cannot
    happen in normal operation.
    """
    d = np.ascontiguousarray(levels, dtype=float)
    yv = np.ascontiguousarray(y, dtype=float)
    nv = np.ascontiguousarray(n, dtype=float)
    t1, t2, ll, conv = _kernels.irls_logistic(d, yv, nv)
    if not math.isfinite(ll):
        raise InferenceError("singular weighted design in logistic fit")
    return GlmFit(t1, t2, ll, 2 * 2 - 2 * ll, bool(conv))


def select_ordering_aic(level_sets, y, n) -> tuple[int, list[GlmFit]]:
    """Fit the GLM under each ordering's level assignment; smallest AIC wins.

    Ties break to the lowest ordering index.  Returns the 0-based winner and
    all fits (failed fits carry ``-inf`` log likelihood).
    """
    if not level_sets:
        raise InferenceError("at least one ordering required")
    fits: list[GlmFit] = []
    for levels in level_sets:
        try:
            fits.append(fit_glm_fractional(levels, y, n))
        except InferenceError:
            fits.append(GlmFit(np.nan, np.nan, -np.inf, np.inf, False))
    if all(not math.isfinite(f.loglik) for f in fits):
        raise InferenceError("logistic fit failed under every ordering")
    best = min(range(len(fits)), key=lambda s: (fits[s].aic, s))
    return best, fits


@dataclass
class PosteriorGrid:
    """Posterior over a (theta1, log theta2) grid plus its trapezoid summary."""

    t1g: np.ndarray
    lt2g: np.ndarray
    logpost: np.ndarray
    theta1: float
    theta2: float
    log_norm: float

    def _weights(self) -> np.ndarray:
        w1 = np.ones(len(self.t1g))
        w1[0] = w1[-1] = 0.5
        w2 = np.ones(len(self.lt2g))
        w2[0] = w2[-1] = 0.5
        w = np.outer(w1, w2) * np.exp(self.logpost - self.logpost.max())
        return w / w.sum()

    def prob_interval(self, dtilde: float, lo: float = 0.025, hi: float = 0.975):
        """Quadrature-based credible interval for the toxicity at one level."""
        w = self._weights().ravel()
        p = expit(
            self.t1g[:, None] + np.exp(self.lt2g)[None, :] * dtilde
        ).ravel()
        order = np.argsort(p)
        cdf = np.cumsum(w[order])
        return (
            float(p[order][np.searchsorted(cdf, lo)]),
            float(p[order][min(np.searchsorted(cdf, hi), len(p) - 1)]),
        )


def _grid_from_prior(prior: NormalPrior, nodes: int):
    t1g = np.linspace(prior.mu1 - 8 * prior.sigma1, prior.mu1 + 8 * prior.sigma1, nodes)
    lt2g = np.linspace(prior.mu2 - 8 * prior.sigma2, prior.mu2 + 8 * prior.sigma2, nodes)
    return t1g, lt2g


def _grid_from_wald(d, y, n, nodes: int, widen: float = 1.0):
    """Grid centered on the augmented MLE, +/- 10 Wald sd in (theta1, log theta2)."""
    t1, t2, ll, _ = _kernels.irls_logistic(d, y, n)
    if not math.isfinite(ll):
        t1, t2 = 0.0, 1.0
        hw1, hw2 = 20.0, 10.0
    else:
        i11, i12, i22 = _kernels.irls_fisher(d, y, n, t1, t2)
        det = i11 * i22 - i12 * i12
        if det <= 0:
            hw1, hw2 = 20.0, 10.0
        else:
            sd1 = math.sqrt(i22 / det)
            sd2 = math.sqrt(i11 / det)
            hw1 = min(max(10.0 * sd1, 2.0), 60.0)
            hw2 = min(max(10.0 * sd2 / max(abs(t2), 1e-3), 2.0), 30.0)
    center2 = math.log(max(t2, 1e-2))
    t1g = np.linspace(t1 - widen * hw1, t1 + widen * hw1, nodes)
    lt2g = np.linspace(center2 - widen * hw2, center2 + widen * hw2, nodes)
    return t1g, lt2g


def _evaluate(
    d, y, n, t1g, lt2g, prior: NormalPrior | None, measure: str = "log-theta2"
) -> PosteriorGrid:
    logpost = np.empty((len(t1g), len(lt2g)))
    _kernels.loglik_grid_2d(d, y, n, t1g, lt2g, logpost)
    if prior is not None:
        _kernels.add_normal_logprior(
            t1g, lt2g, prior.mu1, prior.mu2, prior.sigma1, prior.sigma2, logpost
        )
    elif measure == "theta2":
        # pseudo-posterior flat in theta2 itself: the change of variables to
        # the log theta2 grid carries a Jacobian term
        logpost += lt2g[None, :]
    e1, e2, logz = _kernels.trapezoid_moments_2d(t1g, lt2g, logpost)
    if not (math.isfinite(logz) and math.isfinite(e1) and math.isfinite(e2)):
        raise QuadratureError("posterior normalizer is not finite")
    return PosteriorGrid(t1g, lt2g, logpost, e1, e2, logz)


def posterior_quadrature_blrm(
    levels,
    y,
    n,
    prior: NormalPrior | None = None,
    nodes: int = 201,
    check_stability: bool = False,
    measure: str = "log-theta2",
) -> PosteriorGrid:
    """Posterior mean of (theta1, theta2) by tensor trapezoid quadrature.

    With ``prior`` given, the density is the normal prior times the binomial
    likelihood of the observations, on a grid spanning the prior mean +/- 8 sd.
    Without it, the observations are expected to include the two pseudo
    cohorts (the pseudo-posterior form) and the grid is centered on the
    augmented MLE +/- 10 Wald sd; ``measure`` then says which slope scale the
    implied prior is flat on ("theta2" or "log-theta2").

    ``check_stability`` re-evaluates at doubled resolution and, if the means
    shift by more than 1e-3, retries on a widened range at double the node
    count (weak-data posteriors spread over a huge grid and need the extra
    resolution) before raising.  Simulation loops leave it off; the conduct
    service turns it on.
    """
    if measure not in ("theta2", "log-theta2"):
        raise ValueError(f"unknown pseudo measure {measure!r}")
    d = np.ascontiguousarray(levels, dtype=float)
    yv = np.ascontiguousarray(y, dtype=float)
    nv = np.ascontiguousarray(n, dtype=float)
    widen = 1.0
    for attempt in range(4):
        if prior is not None:
            t1g, lt2g = _grid_from_prior(prior, nodes)
            if widen != 1.0:
                mid1, mid2 = prior.mu1, prior.mu2
                t1g = mid1 + (t1g - mid1) * widen
                lt2g = mid2 + (lt2g - mid2) * widen
        else:
            t1g, lt2g = _grid_from_wald(d, yv, nv, nodes, widen)
        post = _evaluate(d, yv, nv, t1g, lt2g, prior, measure)
        if not check_stability:
            return post
        fine = _evaluate(
            d,
            yv,
            nv,
            np.linspace(t1g[0], t1g[-1], 2 * nodes - 1),
            np.linspace(lt2g[0], lt2g[-1], 2 * nodes - 1),
            prior,
            measure,
        )
        if (
            abs(fine.theta1 - post.theta1) <= 1e-3
            and abs(fine.theta2 - post.theta2) <= 1e-3
        ):
            return post
        widen = 1.5
        nodes = 2 * nodes - 1
    raise QuadratureError("posterior quadrature unstable after range widening")


@dataclass
class CrmPosterior:
    a_hat: float
    log_marginal: float
    agrid: np.ndarray
    logprior: np.ndarray
    la: np.ndarray  # log alpha per observed level
    yv: np.ndarray
    nv: np.ndarray
    _logjoint: np.ndarray | None = None

    @property
    def logjoint(self) -> np.ndarray:
        # simulation loops never need the full joint; build it on demand
        if self._logjoint is None:
            lp = np.minimum(np.exp(self.agrid)[:, None] * self.la[None, :], -1e-12)
            ll = np.sum(
                self.yv * lp + (self.nv - self.yv) * np.log1p(-np.exp(lp)), axis=1
            )
            self._logjoint = self.logprior + ll
        return self._logjoint

    def prob_interval(self, alpha: float, lo: float = 0.025, hi: float = 0.975):
        """Credible interval for alpha ** exp(a); monotone decreasing in a."""
        w = np.ones(len(self.agrid))
        w[0] = w[-1] = 0.5
        w = w * np.exp(self.logjoint - self.logjoint.max())
        w /= w.sum()
        cdf = np.cumsum(w)
        la = math.log(alpha)
        # p is decreasing in a, so the p-quantile q maps to the a-quantile 1-q
        a_hi = self.agrid[np.searchsorted(cdf, 1 - lo) - 1 if np.searchsorted(cdf, 1 - lo) > 0 else 0]
        a_lo = self.agrid[min(np.searchsorted(cdf, 1 - hi), len(self.agrid) - 1)]
        return (math.exp(math.exp(a_hi) * la), math.exp(math.exp(a_lo) * la))


def posterior_quadrature_crm(
    alpha_levels, y, n, sigma: float, nodes: int = 201
) -> CrmPosterior:
    """1-D quadrature for the power model with exponent prior a ~ N(0, sigma^2).

    Returns the posterior mean of a and the log marginal likelihood (binomial
    kernel), which is 0 for empty data.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    alpha_levels = np.ascontiguousarray(alpha_levels, dtype=float)
    yv = np.ascontiguousarray(y, dtype=float)
    nv = np.ascontiguousarray(n, dtype=float)
    agrid = np.linspace(-8 * sigma, 8 * sigma, nodes)
    logprior = -0.5 * (agrid / sigma) ** 2 - 0.5 * math.log(2 * math.pi * sigma**2)
    a_hat, logml = _kernels.crm_grid_posterior(
        agrid, logprior, np.log(alpha_levels), yv, nv
    )
    if not math.isfinite(logml):
        raise QuadratureError("power-model marginal likelihood is not finite")
    return CrmPosterior(a_hat, logml, agrid, logprior, np.log(alpha_levels), yv, nv)


def select_ordering_bayes(log_marginals, prior_probs) -> tuple[int, np.ndarray]:
    """Posterior over orderings from per-ordering log marginal likelihoods.

    Ties break to the lowest index.  Invariant to adding a constant to all
    log marginals.
    """
    lm = np.asarray(log_marginals, dtype=float)
    pr = np.asarray(prior_probs, dtype=float)
    if not math.isclose(pr.sum(), 1.0, rel_tol=1e-9, abs_tol=1e-9):
        raise ValueError("ordering prior probabilities must sum to 1")
    with np.errstate(divide="ignore"):
        logw = lm + np.log(pr)
    if np.all(np.isneginf(logw)):
        raise InferenceError("all ordering marginals are zero")
    mx = logw.max()
    w = np.exp(logw - mx)
    probs = w / w.sum()
    return int(np.argmax(probs)), probs


def select_combination(phat, ttl: float, candidates) -> int:
    """Arm whose estimated toxicity is closest to the target level.

    ``candidates`` is in priority order (SoC before d_1, then ascending dose
    index); ties go to the earlier candidate.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate arms")
    best, best_err = candidates[0], abs(phat[candidates[0]] - ttl)
    for arm in candidates[1:]:
        err = abs(phat[arm] - ttl)
        if err < best_err - 1e-15:
            best, best_err = arm, err
    return best
