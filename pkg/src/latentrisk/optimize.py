"""Downhill simplex minimization with randomized re-starts of decreasing amplitude."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    n_eval: int
    n_iter: int
    converged: bool


def nelder_mead(f, x0, step=0.1, ftol: float = 1e-8, max_iter: int | None = None,
                max_eval: int | None = None, adaptive: bool = False) -> SimplexResult:
    """Minimize ``f`` from ``x0`` with the Nelder-Mead simplex.

    The initial simplex is ``x0`` plus ``step`` along each axis.  Iteration stops
    when the spread of function values across the simplex falls below ``ftol``
    or the iteration/evaluation budget runs out.  Standard coefficients
    (reflection 1, expansion 2, contraction 1/2, shrink 1/2) are used unless
    ``adaptive`` selects the dimension-dependent ones of Gao and Han (2012).
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    n = x0.size
    if max_iter is None:
        max_iter = 400 * max(n, 1)
    if max_eval is None:
        max_eval = 2 * max_iter + n + 1
    if adaptive and n > 1:
        rho, chi, psi, sigma = 1.0, 1.0 + 2.0 / n, 0.75 - 1.0 / (2 * n), 1.0 - 1.0 / n
    else:
        rho, chi, psi, sigma = 1.0, 2.0, 0.5, 0.5

    def fe(x):
        v = f(x)
        return v if np.isfinite(v) else np.inf

    if n == 0:
        return SimplexResult(x0, fe(x0), 1, 0, True)
    sim = np.repeat(x0[None, :], n + 1, axis=0)
    sim[1:] += np.diag(np.broadcast_to(np.asarray(step, dtype=float), (n,)))
    fs = np.array([fe(x) for x in sim])
    n_eval = n + 1
    it = 0
    converged = False
    while it < max_iter and n_eval < max_eval:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        if fs[-1] - fs[0] <= ftol:
            # a flat spread can also mean the simplex straddles the minimum
            # symmetrically; the centroid of all vertices exposes that case
            xm = sim.mean(axis=0)
            fm = fe(xm)
            n_eval += 1
            if fm < fs[0] - ftol:
                sim[-1], fs[-1] = xm, fm
                continue
            converged = True
            break
        it += 1
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + rho * (centroid - sim[-1])
        fr = fe(xr)
        n_eval += 1
        if fr < fs[0]:
            xe = centroid + rho * chi * (centroid - sim[-1])
            fe_ = fe(xe)
            n_eval += 1
            if fe_ < fr:
                sim[-1], fs[-1] = xe, fe_
            else:
                sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = centroid + psi * rho * (centroid - sim[-1])
            fc = fe(xc)
            n_eval += 1
            if fc <= fr:
                sim[-1], fs[-1] = xc, fc
                continue
        else:
            xc = centroid - psi * (centroid - sim[-1])
            fc = fe(xc)
            n_eval += 1
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
                continue
        sim[1:] = sim[0] + sigma * (sim[1:] - sim[0])
        fs[1:] = [fe(x) for x in sim[1:]]
        n_eval += n
    best = int(np.argmin(fs))
    return SimplexResult(sim[best].copy(), float(fs[best]), n_eval, it, converged)


@dataclass
class SearchTrace:
    """Best-so-far objective after the initial descent and after each randomization."""

    amplitudes: list = field(default_factory=list)
    best: list = field(default_factory=list)
    n_eval: int = 0


def randomized_simplex(f, x0, rng: np.random.Generator, amplitudes=(), step=0.1,
                       ftol: float = 1e-8, max_iter: int | None = None,
                       adaptive: bool = False, callback=None):
    """Simplex descent alternated with random kicks of the best point.

    After an initial descent from ``x0``, each amplitude ``a`` perturbs the
    best point found so far by ``a * N(0, 1)`` in every coordinate and descends
    again; the result replaces the best point only if it improves on it.
    Returns ``(x_best, f_best, trace)``.
    """
    x0 = np.asarray(x0, dtype=float)
    f0 = f(x0)
    res = nelder_mead(f, x0, step, ftol, max_iter, adaptive=adaptive)
    trace = SearchTrace(n_eval=res.n_eval + 1)
    best_x, best_f = (res.x, res.fun) if res.fun <= f0 or not np.isfinite(f0) else (x0, f0)
    trace.amplitudes.append(0.0)
    trace.best.append(best_f)
    if callback:
        callback(0, 0.0, best_f)
    for k, amp in enumerate(amplitudes, start=1):
        start = best_x + amp * rng.standard_normal(best_x.size)
        res = nelder_mead(f, start, step, ftol, max_iter, adaptive=adaptive)
        trace.n_eval += res.n_eval
        if res.fun < best_f:
            best_x, best_f = res.x, res.fun
        trace.amplitudes.append(float(amp))
        trace.best.append(best_f)
        if callback:
            callback(k, amp, best_f)
    return best_x, best_f, trace
