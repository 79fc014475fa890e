"""Independent reference computations used by the tests.

Nothing here calls the package's quadrature or mixture code; hazards are
re-derived from the kernel definition and integrated by other means.
"""
from __future__ import annotations

import math

import mpmath
import numpy as np
from scipy import integrate
from scipy.stats import norm

Z_Q = 0.67449


def kernel_rate(t, knots, sigma, xi):
    """Direct kernel-sum rate: sum_k xi_k w_k(t) / sum_k w_k(t)."""
    t = np.asarray(t, dtype=float)[..., None]
    if len(knots) == 1:
        return np.full(t.shape[:-1], float(xi[0]))
    w = np.exp(-((t - knots) ** 2) / (2 * sigma**2))
    return (w * xi).sum(-1) / w.sum(-1)


def knot_grid(t_min, t_max, K):
    if K == 0:
        return np.array([t_min]), math.inf
    return t_min + np.arange(K + 1) / K * (t_max - t_min), (t_max - t_min) / (2 * K)


def simpson_cumulative(rate, t, panels=100_000):
    """int_0^t rate(s) ds by composite Simpson with ``panels`` panels."""
    if t == 0:
        return 0.0
    s = np.linspace(0.0, t, 2 * panels + 1)
    return float(integrate.simpson(rate(s), x=s))


def mp_kernel_rate(t, knots, sigma, xi):
    t = mpmath.mpf(t)
    if len(knots) == 1:
        return mpmath.mpf(xi[0])
    w = [mpmath.e ** (-((t - mpmath.mpf(k)) ** 2) / (2 * mpmath.mpf(sigma) ** 2)) for k in knots]
    return mpmath.fsum(wi * x for wi, x in zip(w, xi)) / mpmath.fsum(w)


def mp_cumulative(t, knots, sigma, xi):
    return mpmath.quad(lambda s: mp_kernel_rate(s, knots, sigma, xi), [0, t])


def direct_mixture_loglik(weights, coef, xis, t_min, t_max, z, times, labels, dps=30):
    """Log-likelihood of an atomic-mixture measure, evaluated term by term in mpmath.

    coef: (L, R+1, p+1) with row 0 the censoring risk; xis: list of R+1 knot arrays.
    """
    with mpmath.workdps(dps):
        K = len(xis[0]) - 1
        knots, sigma = knot_grid(t_min, t_max, K)
        total = mpmath.mpf(0)
        for zi, ti, ri in zip(z, times, labels):
            za = [1.0] + list(zi)
            Lam = [mp_cumulative(ti, knots, sigma, xi) for xi in xis]
            lam = mp_kernel_rate(ti, knots, sigma, xis[ri])
            acc = mpmath.mpf(0)
            for w, b in zip(weights, coef):
                eta = [mpmath.fsum(mpmath.mpf(bb) * zz for bb, zz in zip(b[r], za)) for r in range(len(xis))]
                load = mpmath.fsum(mpmath.e ** eta[r] * Lam[r] for r in range(len(xis)))
                acc += w * lam * mpmath.e ** (eta[ri] - load)
            total += mpmath.log(acc)
        return float(total)


def lquq_reference(t, n=64):
    """Data sets A-C primary risk, quartile band: 2 int_{zQ}^{inf} Dz (e^{-(t/20)e^{2z}} + e^{-(t/20)e^{-2z}})."""
    x, w = np.polynomial.legendre.leggauss(n)
    a, b = Z_Q, 8.0
    z = 0.5 * (b - a) * x + 0.5 * (a + b)
    wz = 0.5 * (b - a) * w * norm.pdf(z)
    t = np.asarray(t, dtype=float)[..., None]
    return 2 * np.sum(wz * (np.exp(-(t / 20) * np.exp(2 * z)) + np.exp(-(t / 20) * np.exp(-2 * z))), -1)


def iq_reference(t, n=64):
    """Data sets A-C primary risk, inter-quartile band: 2 int_0^{zQ} Dz (same integrand)."""
    x, w = np.polynomial.legendre.leggauss(n)
    a, b = 0.0, Z_Q
    z = 0.5 * (b - a) * x + 0.5 * (a + b)
    wz = 0.5 * (b - a) * w * norm.pdf(z)
    t = np.asarray(t, dtype=float)[..., None]
    return 2 * np.sum(wz * (np.exp(-(t / 20) * np.exp(2 * z)) + np.exp(-(t / 20) * np.exp(-2 * z))), -1)


def simulate_competing(rates_fn, n, rng):
    """Draw (time, label) for n individuals with constant per-individual rates.

    ``rates_fn(rng, n)`` returns an (n, R+1) array of constant hazards,
    column 0 the censoring risk.
    """
    h = rates_fn(rng, n)
    with np.errstate(divide="ignore"):
        lat = rng.exponential(1.0, size=h.shape) / h
    lab = np.argmin(lat, axis=1)
    return lat[np.arange(n), lab], lab


def product_limit(times, events):
    """Textbook product-limit survival at each distinct event time (deaths before censoring)."""
    times = np.asarray(times, float)
    events = np.asarray(events, bool)
    out_t, out_s, s = [], [], 1.0
    for u in sorted(set(times[events])):
        n = np.sum(times >= u)
        d = np.sum((times == u) & events)
        s *= 1 - d / n
        out_t.append(u)
        out_s.append(s)
    return np.array(out_t), np.array(out_s)
