"""Numerical hot paths, jitted with numba.

Everything here works on plain float64 arrays so the simulation loop stays
allocation-light.  Observations are (level, events, size) triples where sizes
and events may be fractional (pseudo cohorts).
"""

from __future__ import annotations

import numpy as np
from numba import njit

LP_CAP = 20.0  # linear-predictor magnitude cap; guards separation


@njit(cache=True)
def _log_expit(x):
    # log(1/(1+exp(-x))) without overflow
    if x >= 0.0:
        return -np.log1p(np.exp(-x))
    return x - np.log1p(np.exp(x))


@njit(cache=True)
def _binom_loglik(d, y, n, t1, t2):
    ll = 0.0
    for i in range(d.shape[0]):
        eta = t1 + t2 * d[i]
        ll += y[i] * _log_expit(eta) + (n[i] - y[i]) * _log_expit(-eta)
    return ll


@njit(cache=True)
def irls_logistic(d, y, n):
    """Two-parameter logistic fit by IRLS with fractional binomial weights.

    Damped Newton: each IRLS step is halved until the binomial-kernel log
    likelihood does not decrease.  Returns (theta1, theta2, loglik, converged)
    where converged is 1.0/0.0.  Raises nothing; a singular weighted design
    yields converged=0 and nan parameters (the caller decides whether that is
    an error), and a fit escaping |eta| > LP_CAP is flagged non-converged
    (quasi-separation).
    """
    m = d.shape[0]
    ybar = 0.0
    ntot = 0.0
    for i in range(m):
        ybar += y[i]
        ntot += n[i]
    p0 = min(max(ybar / ntot, 1e-6), 1.0 - 1e-6)
    t1 = np.log(p0 / (1.0 - p0))
    t2 = 1.0
    ll = _binom_loglik(d, y, n, t1, t2)
    converged = 0.0
    for _ in range(200):
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        g0 = 0.0
        g1 = 0.0
        for i in range(m):
            eta = t1 + t2 * d[i]
            if eta > LP_CAP:
                eta = LP_CAP
            elif eta < -LP_CAP:
                eta = -LP_CAP
            p = 1.0 / (1.0 + np.exp(-eta))
            w = n[i] * p * (1.0 - p)
            r = y[i] - n[i] * p
            s0 += w
            s1 += w * d[i]
            s2 += w * d[i] * d[i]
            g0 += r
            g1 += r * d[i]
        det = s0 * s2 - s1 * s1
        if abs(det) < 1e-12 * max(s0 * s2, 1e-300):
            return np.nan, np.nan, -np.inf, 0.0
        dt1 = (s2 * g0 - s1 * g1) / det
        dt2 = (s0 * g1 - s1 * g0) / det
        step = 1.0
        new1 = t1 + dt1
        new2 = t2 + dt2
        new_ll = _binom_loglik(d, y, n, new1, new2)
        for _ in range(40):
            if new_ll >= ll - 1e-12:
                break
            step *= 0.5
            new1 = t1 + step * dt1
            new2 = t2 + step * dt2
            new_ll = _binom_loglik(d, y, n, new1, new2)
        moved = max(abs(new1 - t1), abs(new2 - t2))
        t1 = new1
        t2 = new2
        ll = new_ll
        if moved < 1e-8:
            converged = 1.0
            break
    for i in range(m):
        eta = t1 + t2 * d[i]
        if eta > LP_CAP or eta < -LP_CAP:
            converged = 0.0
            break
    return t1, t2, ll, converged


@njit(cache=True)
def irls_fisher(d, y, n, t1, t2):
    """Observed Fisher information entries (i11, i12, i22) at (t1, t2)."""
    i11 = 0.0
    i12 = 0.0
    i22 = 0.0
    for i in range(d.shape[0]):
        eta = t1 + t2 * d[i]
        if eta > LP_CAP:
            eta = LP_CAP
        elif eta < -LP_CAP:
            eta = -LP_CAP
        p = 1.0 / (1.0 + np.exp(-eta))
        w = n[i] * p * (1.0 - p)
        i11 += w
        i12 += w * d[i]
        i22 += w * d[i] * d[i]
    return i11, i12, i22


@njit(cache=True)
def loglik_grid_2d(d, y, n, t1g, lt2g, out):
    """Binomial-kernel log likelihood over a (theta1, log theta2) grid."""
    n1 = t1g.shape[0]
    n2 = lt2g.shape[0]
    m = d.shape[0]
    for j in range(n2):
        t2 = np.exp(lt2g[j])
        for i in range(n1):
            ll = 0.0
            for q in range(m):
                eta = t1g[i] + t2 * d[q]
                ll += y[q] * _log_expit(eta) + (n[q] - y[q]) * _log_expit(-eta)
            out[i, j] = ll


@njit(cache=True)
def add_normal_logprior(t1g, lt2g, mu1, mu2, s1, s2, out):
    for i in range(t1g.shape[0]):
        a = -0.5 * ((t1g[i] - mu1) / s1) ** 2
        for j in range(lt2g.shape[0]):
            out[i, j] += a - 0.5 * ((lt2g[j] - mu2) / s2) ** 2


@njit(cache=True)
def trapezoid_moments_2d(t1g, lt2g, logpost):
    """Posterior mean of (theta1, theta2) and log normalizer by trapezoid rule.

    The density is taken over (theta1, log theta2); theta2 means therefore
    integrate exp(log theta2) against it.  Returns (E_t1, E_t2, logZ).
    """
    n1 = t1g.shape[0]
    n2 = lt2g.shape[0]
    mx = -np.inf
    for i in range(n1):
        for j in range(n2):
            if logpost[i, j] > mx:
                mx = logpost[i, j]
    z = 0.0
    e1 = 0.0
    e2 = 0.0
    for i in range(n1):
        wi = 0.5 if (i == 0 or i == n1 - 1) else 1.0
        for j in range(n2):
            w = wi * (0.5 if (j == 0 or j == n2 - 1) else 1.0)
            v = w * np.exp(logpost[i, j] - mx)
            z += v
            e1 += v * t1g[i]
            e2 += v * np.exp(lt2g[j])
    h1 = t1g[1] - t1g[0]
    h2 = lt2g[1] - lt2g[0]
    return e1 / z, e2 / z, mx + np.log(z * h1 * h2)


@njit(cache=True)
def crm_grid_posterior(agrid, logprior, logalpha, y, n):
    """One-parameter power-model posterior over an exponent grid.

    Model: p_i = alpha_i ** exp(a).  Returns (a_hat, log marginal likelihood)
    with the marginal computed against the supplied prior log density by the
    trapezoid rule.
    """
    na = agrid.shape[0]
    m = logalpha.shape[0]
    lj = np.empty(na)
    mx = -np.inf
    for t in range(na):
        ea = np.exp(agrid[t])
        ll = 0.0
        for q in range(m):
            lp = ea * logalpha[q]  # log p, <= 0
            if lp > -1e-12:
                lp = -1e-12
            p = np.exp(lp)
            ll += y[q] * lp + (n[q] - y[q]) * np.log1p(-p)
        lj[t] = logprior[t] + ll
        if lj[t] > mx:
            mx = lj[t]
    z = 0.0
    ea_mean = 0.0
    for t in range(na):
        w = 0.5 if (t == 0 or t == na - 1) else 1.0
        v = w * np.exp(lj[t] - mx)
        z += v
        ea_mean += v * agrid[t]
    h = agrid[1] - agrid[0]
    return ea_mean / z, mx + np.log(z * h)


@njit(cache=True)
def pseudo_logdensity_grid(t1g, lt2g, d_lo, d_hi, y_lo, u_lo, y_hi, u_hi, out):
    """Unnormalized log pseudo-prior over a (theta1, log theta2) grid."""
    for j in range(lt2g.shape[0]):
        t2 = np.exp(lt2g[j])
        for i in range(t1g.shape[0]):
            e_lo = t1g[i] + t2 * d_lo
            e_hi = t1g[i] + t2 * d_hi
            out[i, j] = (
                y_lo * _log_expit(e_lo)
                + u_lo * _log_expit(-e_lo)
                + y_hi * _log_expit(e_hi)
                + u_hi * _log_expit(-e_hi)
            )
