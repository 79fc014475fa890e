"""Predictive quantities of a fitted latent-class model.

Curves take a covariate vector ``z`` of shape ``(p,)`` (or a stack ``(n, p)``,
which adds a leading axis) and times ``t`` of any shape.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp
from scipy.stats import norm, qmc

from .hazard import composite_nodes, gauss_legendre, panel_counts, N_PANELS, GAUSS_POINTS
from .models import LatentClassModel

Z_QUARTILE = float(norm.ppf(0.75))
BANDS = ("LQ", "UQ", "IQ")
UQ_TRUNCATION = 8.0


def _augment(z, p):
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    if z2.shape[-1] != p:
        raise ValueError(f"expected {p} covariates, got {z2.shape[-1]}")
    return np.column_stack([np.ones(len(z2)), z2]), single


def _check_risk(model, r):
    if not 1 <= r <= model.R:
        raise ValueError(f"risk must be in 1..{model.R}, got {r}")


def _finish(out, single):
    return out[0] if single else out


def _eta(model, za):
    """(n, L, R+1) linear predictors."""
    return np.einsum("iq,lrq->ilr", za, model.coefficients)


def _cumulatives(model, t):
    """t.shape + (R+1,) cumulative base hazards."""
    return np.stack([h.cumulative(t) for h in model.base_hazards], axis=-1)


def _rates(model, t):
    return np.stack([h.eval_rate(t) for h in model.base_hazards], axis=-1)


def decontaminated_survival(model: LatentClassModel, r: int, z, t):
    """``sum_l w_l exp(-exp(beta_r^l . z) Lambda_r(t))``."""
    _check_risk(model, r)
    za, single = _augment(z, model.p)
    t = np.asarray(t, dtype=float)
    lam = model.base_hazards[r].cumulative(t)
    risk = np.exp(za @ model.coefficients[:, r].T)  # (n, L)
    expo = -risk[:, :, None] * lam.reshape(1, 1, -1)
    # 1 - sum_l w_l (1 - e^x): exact at t = 0 and accurate near 1
    out = 1.0 + np.einsum("l,ilt->it", model.weights, np.expm1(expo))
    return _finish(out.reshape((len(za),) + t.shape), single)


def decontaminated_hazard(model: LatentClassModel, r: int, z, t):
    """Rate of risk ``r`` alone, averaged over classes surviving that risk."""
    _check_risk(model, r)
    za, single = _augment(z, model.p)
    t = np.asarray(t, dtype=float)
    hz = model.base_hazards[r]
    lam, Lam = hz.eval_rate(t).ravel(), hz.cumulative(t).ravel()
    eta = za @ model.coefficients[:, r].T
    logit = np.log(model.weights)[None, :, None] - np.exp(eta)[:, :, None] * Lam
    post = np.exp(logit - logsumexp(logit, axis=1, keepdims=True))
    out = lam * np.sum(post * np.exp(eta)[:, :, None], axis=1)
    return _finish(out.reshape((len(za),) + t.shape), single)


def _class_log_weights(model, za, s):
    """log w_l - sum_r' e^{eta_r'} Lambda_r'(s) for every class; shape (n, L, m).

    All risks including r=0 enter; with zero censoring coefficients the r=0
    factor is common to all classes and cancels in any normalized ratio.
    """
    eta = _eta(model, za)
    Lam = _cumulatives(model, s.ravel())  # (m, R+1)
    load = np.einsum("ilr,mr->ilm", np.exp(eta), Lam)
    return np.log(model.weights)[None, :, None] - load, eta


def crude_hazard(model: LatentClassModel, r: int, z, t):
    """Observed rate of risk ``r`` among survivors of all risks."""
    _check_risk(model, r)
    za, single = _augment(z, model.p)
    t = np.asarray(t, dtype=float)
    lw, eta = _class_log_weights(model, za, t)
    post = np.exp(lw - logsumexp(lw, axis=1, keepdims=True))
    lam = model.base_hazards[r].eval_rate(t.ravel())
    out = lam * np.sum(post * np.exp(eta[:, :, r])[:, :, None], axis=1)
    return _finish(out.reshape((len(za),) + t.shape), single)


def crude_survival(model: LatentClassModel, r: int, z, t):
    """``exp(-int_0^t h_r(s|z) ds)`` with the 11-point rule on the cumulative-hazard panels."""
    _check_risk(model, r)
    za, single = _augment(z, model.p)
    t = np.asarray(t, dtype=float)
    out = np.empty((len(za), t.size))
    for sel, nodes, weights in _panel_groups(model, t.ravel()):
        h = crude_hazard(model, r, za[:, 1:], nodes)  # (n, m, Q)
        out[:, sel] = np.exp(-np.sum(h * weights, axis=-1))
    return _finish(out.reshape((len(za),) + t.shape), single)


def cumulative_incidence(model: LatentClassModel, r: int, z, t):
    """Probability that a type-``r`` event is the first one observed by ``t``.

    The distinct requested times are sorted and the density is integrated
    interval by interval, so the result is nondecreasing in ``t`` by
    construction.
    """
    _check_risk(model, r)
    za, single = _augment(z, model.p)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise ValueError("times must be nonnegative")
    grid, inverse = np.unique(t.ravel(), return_inverse=True)
    width = min(max(model.time_bounds[1], 1e-12) / N_PANELS, 2 * model.base_hazards[0].sigma)
    nodes, weights, owner = _grid_panels(grid, width)
    out = np.zeros((len(za), grid.size))
    if nodes.size:
        lw, eta = _class_log_weights(model, za, nodes)
        dens = logsumexp(lw + eta[:, :, r][:, :, None], axis=1)  # (n, Q)
        f = model.base_hazards[r].eval_rate(nodes) * np.exp(dens)
        per = np.zeros((len(za), grid.size))
        np.add.at(per.T, owner, (f * weights).T)
        out = np.cumsum(per, axis=1)
    out = out[:, inverse.ravel()]
    return _finish(out.reshape((len(za),) + t.shape), single)


def _panel_groups(model, t):
    """Yield ``(mask, nodes, weights)`` per panel count, as used for the cumulative hazards."""
    counts = panel_counts(t, model.base_hazards[0].sigma)
    for n in np.unique(counts):
        sel = counts == n
        nodes, weights = composite_nodes(t[sel], int(n))
        yield sel, nodes, weights


def _grid_panels(t_grid, max_width):
    """Gauss-Legendre nodes covering consecutive grid intervals starting at 0."""
    x, w = gauss_legendre(GAUSS_POINTS)
    edges = np.concatenate([[0.0], t_grid])
    nodes, weights, owner = [], [], []
    for j, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        if b <= a:
            continue
        n = max(1, int(np.ceil((b - a) / max_width)))
        cuts = np.linspace(a, b, n + 1)
        h = np.diff(cuts)[:, None]
        nodes.append((0.5 * (cuts[:-1, None] + cuts[1:, None]) + 0.5 * h * x).ravel())
        weights.append((0.5 * h * w).ravel())
        owner.append(np.full(n * x.size, j))
    if not nodes:
        return np.zeros(0), np.zeros(0), np.zeros(0, int)
    return np.concatenate(nodes), np.concatenate(weights), np.concatenate(owner)


def crude_survival_grid(model: LatentClassModel, r: int, z, t_grid, chunk=256):
    """Crude survival on an increasing grid, integrating interval by interval.

    Each interval is split into panels no wider than ``t_max / 20`` (nor
    twice the kernel width) and
    integrated with 11-point Gauss-Legendre, so long grids cost one pass.
    """
    _check_risk(model, r)
    za, single = _augment(z, model.p)
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0) or np.any(t_grid < 0):
        raise ValueError("time grid must be nonnegative and strictly increasing")
    t_max = max(model.time_bounds[1], float(t_grid[-1]), 1e-12)
    width = min(t_max / N_PANELS, 2 * model.base_hazards[0].sigma)
    nodes, weights, owner = _grid_panels(t_grid, width)
    out = np.empty((len(za), t_grid.size))
    for s in range(0, len(za), chunk):
        h = crude_hazard(model, r, za[s:s + chunk, 1:], nodes)
        per = np.zeros((h.shape[0], t_grid.size))
        np.add.at(per.T, owner, (h * weights).T)
        out[s:s + chunk] = np.exp(-np.cumsum(per, axis=1))
    return _finish(out, single)


# ---------------------------------------------------------------------------
# class membership


@dataclass(frozen=True)
class ClassPosterior:
    probabilities: np.ndarray  # (N, L)

    @property
    def assignment(self) -> np.ndarray:
        return np.argmax(self.probabilities, axis=1)

    def simplex_coordinates(self) -> np.ndarray:
        """Planar barycentric embedding with class vertices on the unit circle."""
        L = self.probabilities.shape[1]
        ang = np.pi / 2 + 2 * np.pi * np.arange(L) / L
        verts = np.column_stack([np.cos(ang), np.sin(ang)])
        return self.probabilities @ verts


def class_posterior(model: LatentClassModel, cohort) -> ClassPosterior:
    """Retrospective class membership given each individual's (t, r, z)."""
    za = cohort.augmented()
    t = cohort.event_times
    lab = cohort.event_labels
    eta = _eta(model, za)
    Lam = _cumulatives(model, t)  # (N, R+1)
    logit = np.log(model.weights)[None, :] - np.einsum("ilr,ir->il", np.exp(eta), Lam)
    ev = lab > 0 if not model.free_censoring else np.ones_like(lab, dtype=bool)
    rows = np.flatnonzero(ev)
    logit[rows] += eta[rows, :, lab[rows]]
    p = np.exp(logit - logsumexp(logit, axis=1, keepdims=True))
    return ClassPosterior(p)


def effective_classes(weights) -> float:
    """``exp`` of the Shannon entropy of the class weights."""
    w = np.asarray(weights, dtype=float)
    w = w[w > 0]
    return float(np.exp(-np.sum(w * np.log(w))))


def classification_fraction(assigned, truth) -> float:
    """Fraction correctly assigned under the best matching of fitted to true labels."""
    assigned = np.asarray(assigned, dtype=int)
    truth = np.asarray(truth, dtype=int)
    if assigned.shape != truth.shape or assigned.size == 0:
        raise ValueError("assignment and truth must be nonempty and equally long")
    counts = np.zeros((assigned.max() + 1, truth.max() + 1))
    np.add.at(counts, (assigned, truth), 1)
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return float(counts[rows, cols].sum() / assigned.size)


# ---------------------------------------------------------------------------
# quantile bands


def band_limits(band: str):
    band = band.upper()
    if band == "LQ":
        return -UQ_TRUNCATION, -Z_QUARTILE
    if band == "UQ":
        return Z_QUARTILE, UQ_TRUNCATION
    if band == "IQ":
        return -Z_QUARTILE, Z_QUARTILE
    raise ValueError(f"unknown band {band!r}; expected one of {BANDS}")


def band_nodes(band: str, n: int = 64):
    """Gauss-Legendre nodes on the band, weighted by the normalized normal density."""
    a, b = band_limits(band)
    x, w = gauss_legendre(n)
    z = 0.5 * (b - a) * x + 0.5 * (a + b)
    wz = 0.5 * (b - a) * w * norm.pdf(z)
    return z, wz / wz.sum()


def _band_covariates(model, covariate_index, band, n_samples, seed):
    """Quasi-random covariate vectors: the banded one by inverse CDF, the rest standard normal."""
    a, b = band_limits(band)
    u = qmc.Sobol(model.p, scramble=True, seed=seed).random(n_samples)
    u = np.clip(u, 1e-12, 1 - 1e-12)
    z = norm.ppf(u)
    lo, hi = norm.cdf(a), norm.cdf(b)
    z[:, covariate_index] = norm.ppf(lo + (hi - lo) * u[:, covariate_index])
    return z


def quantile_band_curve(model: LatentClassModel, r: int, covariate_index: int, band: str, t_grid,
                        kind: str = "decontaminated", mode: str = "analytic", cohort=None,
                        n_nodes: int = 64, n_samples: int = 4096, seed: int = 0):
    """Survival of risk ``r`` averaged over one covariate's quartile band.

    ``covariate_index`` is 0-based over the p covariates.  In analytic mode the
    covariate follows a standard normal law restricted to the band.  For the
    decontaminated curve the band is integrated with ``n_nodes`` Gauss-Legendre
    points and the remaining covariates, which enter each class only through a
    normal offset, with Gauss-Hermite.  Crude curves mix risks, so analytic mode
    averages them over ``n_samples`` scrambled Sobol points instead.  Empirical
    mode averages over the members of ``cohort`` whose covariate lies in the
    band (sample quartiles).
    """
    _check_risk(model, r)
    if not 0 <= covariate_index < model.p:
        raise ValueError(f"covariate_index must be in 0..{model.p - 1}")
    band_limits(band)
    if kind not in ("decontaminated", "crude"):
        raise ValueError(f"unknown curve kind {kind!r}")
    t_grid = np.asarray(t_grid, dtype=float)
    if mode == "empirical":
        if cohort is None:
            raise ValueError("empirical mode needs a cohort")
        col = cohort.covariates[:, covariate_index]
        q1, q3 = np.quantile(col, [0.25, 0.75])
        sel = {"LQ": col <= q1, "UQ": col >= q3, "IQ": (col > q1) & (col < q3)}[band.upper()]
        return cohort_average_curve(model, r, cohort.covariates[sel], t_grid, kind)
    if mode != "analytic":
        raise ValueError(f"unknown mode {mode!r}")
    if kind == "crude":
        z = _band_covariates(model, covariate_index, band, n_samples, seed)
        return cohort_average_curve(model, r, z, t_grid, kind)
    zb, wb = band_nodes(band, n_nodes)
    coef = model.coefficients[:, r]  # (L, p+1)
    others = np.delete(np.arange(1, model.p + 1), covariate_index)
    spread = np.sqrt(np.sum(coef[:, others] ** 2, axis=1))  # (L,)
    gh_x, gh_w = np.polynomial.hermite_e.hermegauss(40)
    gh_w = gh_w / gh_w.sum()
    lam = model.base_hazards[r].cumulative(t_grid)
    eta = (coef[:, 0][:, None, None] + coef[:, covariate_index + 1][:, None, None] * zb[None, :, None]
           + spread[:, None, None] * gh_x[None, None, :])  # (L, band, GH)
    deficit = np.expm1(-np.exp(eta)[..., None] * lam)  # (L, band, GH, T)
    return 1.0 + np.einsum("l,b,g,lbgt->t", model.weights, wb, gh_w, deficit)


def cohort_average_curve(model: LatentClassModel, r: int, covariates, t_grid, kind="decontaminated"):
    """Curve averaged over explicit covariate vectors (rows of ``covariates``)."""
    z = np.atleast_2d(np.asarray(covariates, dtype=float))
    if len(z) == 0:
        raise ValueError("no covariate rows to average over")
    t_grid = np.asarray(t_grid, dtype=float)
    if kind == "decontaminated":
        return decontaminated_survival(model, r, z, t_grid).mean(axis=0)
    if kind == "crude":
        return crude_survival_grid(model, r, z, t_grid).mean(axis=0)
    if kind == "incidence":
        return cumulative_incidence(model, r, z, t_grid).mean(axis=0)
    raise ValueError(f"unknown curve kind {kind!r}")


def default_grid(model: LatentClassModel, n: int = 200) -> np.ndarray:
    """Uniform grid on [0, t_max]."""
    return np.linspace(0.0, model.time_bounds[1], n)
