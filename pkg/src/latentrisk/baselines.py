"""Classical comparison estimators: Kaplan-Meier, Cox regression and gamma frailty."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .hazard import BaseHazard, infer_time_bounds
from .optimize import randomized_simplex


class BaselineError(ValueError):
    pass


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function: ``values[j]`` holds on ``[times[j], times[j+1])``."""

    times: np.ndarray
    values: np.ndarray
    initial: float = 1.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        vals = np.concatenate([[self.initial], self.values])
        return vals[idx + 1]


def kaplan_meier(cohort, r: int = 1) -> StepFunction:
    """Product-limit survival for risk ``r``; every other label counts as censoring.

    At tied times events are processed before censorings, so individuals
    censored at ``t`` are still at risk for the events at ``t``.
    """
    if r < 1:
        raise BaselineError("risk must be >= 1")
    t = cohort.event_times
    event = cohort.event_labels == r
    if not event.any():
        warnings.warn(f"no events of type {r}; survival is constant 1", stacklevel=2)
        return StepFunction(np.zeros(0), np.zeros(0))
    times = np.unique(t[event])
    order = np.sort(t)
    at_risk = t.size - np.searchsorted(order, times, side="left")
    deaths = np.bincount(np.searchsorted(times, t[event]), minlength=times.size)
    surv = np.cumprod(1.0 - deaths / at_risk)
    return StepFunction(times, surv)


@dataclass(frozen=True)
class CoxFit:
    coefficients: np.ndarray
    standard_errors: np.ndarray
    baseline_times: np.ndarray
    baseline_increments: np.ndarray
    partial_loglik: float
    converged: bool
    separation: bool
    n_iter: int

    def cumulative_baseline(self, t):
        t = np.asarray(t, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(self.baseline_increments)])
        return cum[np.searchsorted(self.baseline_times, t, side="right")]

    def to_dict(self):
        return {
            "coefficients": [float(v) for v in self.coefficients],
            "standard_errors": [float(v) for v in self.standard_errors],
            "partial_loglik": float(self.partial_loglik),
            "converged": bool(self.converged),
            "separation": bool(self.separation),
            "n_iter": int(self.n_iter),
            "breslow_baseline": [[float(a), float(b)] for a, b in
                                 zip(self.baseline_times, self.baseline_increments)],
        }


def _risk_set_sums(t, z, beta, event_times):
    """Sums over ``{k : t_k >= u}`` of e^{eta}, e^{eta} z and e^{eta} z z^T at each ``u``."""
    order = np.argsort(t, kind="stable")
    ts, zs = t[order], z[order]
    e = np.exp(zs @ beta)
    s0 = np.cumsum(e[::-1])[::-1]
    s1 = np.cumsum((e[:, None] * zs)[::-1], axis=0)[::-1]
    s2 = np.cumsum((e[:, None, None] * zs[:, :, None] * zs[:, None, :])[::-1], axis=0)[::-1]
    idx = np.searchsorted(ts, event_times, side="left")
    return s0[idx], s1[idx], s2[idx]


def cox_partial_loglik(beta, cohort, r: int = 1):
    """Breslow partial log-likelihood with gradient and Hessian."""
    z = cohort.covariates
    t = cohort.event_times
    ev = cohort.event_labels == r
    beta = np.asarray(beta, dtype=float)
    s0, s1, s2 = _risk_set_sums(t, z, beta, t[ev])
    zbar = s1 / s0[:, None]
    ll = float(np.sum(z[ev] @ beta - np.log(s0)))
    grad = np.sum(z[ev] - zbar, axis=0)
    hess = -np.sum(s2 / s0[:, None, None] - zbar[:, :, None] * zbar[:, None, :], axis=0)
    return ll, grad, hess


def cox_fit(cohort, primary_risk: int = 1, max_iter: int = 100, tol: float = 1e-10) -> CoxFit:
    """Cox regression for one risk by Newton-Raphson on the Breslow partial likelihood."""
    z = cohort.covariates
    ev = cohort.event_labels == primary_risk
    if not ev.any():
        raise BaselineError(f"no events of type {primary_risk}")
    p = z.shape[1]
    for a in range(p):
        for b in range(a + 1, p):
            if np.array_equal(z[:, a], z[:, b]):
                raise BaselineError(f"covariate columns {a} and {b} are identical")
    beta = np.zeros(p)
    ll, g, H = cox_partial_loglik(beta, cohort, primary_risk)
    converged = separation = False
    it = 0
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            separation = True
            break
        scale = 1.0
        while True:
            cand = beta + scale * step
            ll_new, g_new, H_new = cox_partial_loglik(cand, cohort, primary_risk)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12:
                break
            scale /= 2
            if scale < 1e-10:
                break
        done = abs(ll_new - ll) < tol and np.max(np.abs(scale * step), initial=0.0) < 1e-7
        beta, ll, g, H = cand, ll_new, g_new, H_new
        if np.max(np.abs(beta), initial=0.0) > 30:
            separation = True
            break
        if done:
            converged = True
            break
    try:
        cov = np.linalg.inv(-H)
        se = np.sqrt(np.where(np.diag(cov) > 0, np.diag(cov), np.nan))
    except np.linalg.LinAlgError:
        se = np.full(p, np.nan)
    if separation:
        warnings.warn("partial likelihood is monotone (perfect separation suspected)", stacklevel=2)
    times = np.unique(cohort.event_times[ev])
    s0, _, _ = _risk_set_sums(cohort.event_times, z, beta, times)
    deaths = np.bincount(np.searchsorted(times, cohort.event_times[ev]), minlength=times.size)
    return CoxFit(beta, se, times, deaths / s0, ll, converged, separation, it)


# ---------------------------------------------------------------------------
# gamma frailty


def _check_alpha(alpha):
    if not alpha > 0:
        raise BaselineError(f"frailty shape alpha must be > 0, got {alpha}")


def gamma_laplace(alpha, y):
    """``int g(b) exp(-y e^b) db = (alpha / (alpha + y))^alpha`` for the gamma frailty law."""
    _check_alpha(alpha)
    y = np.asarray(y, dtype=float)
    return np.exp(-alpha * np.log1p(y / alpha))


def gamma_frailty_loglik(alpha: float, coefficients, base: BaseHazard, cohort, r: int = 1) -> float:
    """Closed-form primary-risk log-likelihood under a gamma frailty of shape ``alpha``.

    ``coefficients`` holds the ``p`` regression parameters (no intercept; the
    frailty law has unit mean).
    """
    _check_alpha(alpha)
    beta = np.asarray(coefficients, dtype=float)
    ev = cohort.event_labels == r
    eta = cohort.covariates @ beta
    Lam = base.cumulative(cohort.event_times)
    lg = np.log1p(Lam * np.exp(eta) / alpha)
    with np.errstate(divide="ignore"):
        log_rate = np.log(base.eval_rate(cohort.event_times[ev]))
    return float(np.sum(log_rate) + np.sum(eta[ev]) - alpha * np.sum(lg) - np.sum(lg[ev]))


def cox_form_loglik(coefficients, base: BaseHazard, cohort, r: int = 1) -> float:
    """Frailty-free proportional-hazards log-likelihood of risk ``r`` (the alpha -> infinity limit)."""
    beta = np.asarray(coefficients, dtype=float)
    ev = cohort.event_labels == r
    eta = cohort.covariates @ beta
    Lam = base.cumulative(cohort.event_times)
    return float(np.sum(np.log(base.eval_rate(cohort.event_times[ev]))) + np.sum(eta[ev])
                 - np.sum(Lam * np.exp(eta)))


def gamma_survival(alpha, coefficients, base: BaseHazard, z, t):
    """Decontaminated survival ``(1 + Lambda(t) e^{beta.z} / alpha)^(-alpha)``."""
    _check_alpha(alpha)
    y = base.cumulative(t) * np.exp(np.asarray(z, dtype=float) @ np.asarray(coefficients, float))
    return gamma_laplace(alpha, y)


def gamma_hazard(alpha, coefficients, base: BaseHazard, z, t):
    """Decontaminated hazard ``lambda(t) e^{beta.z} / (1 + Lambda(t) e^{beta.z} / alpha)``."""
    _check_alpha(alpha)
    risk = np.exp(np.asarray(z, dtype=float) @ np.asarray(coefficients, float))
    return base.eval_rate(t) * risk / (1.0 + base.cumulative(t) * risk / alpha)


@dataclass(frozen=True)
class GammaFrailtyFit:
    alpha: float
    coefficients: np.ndarray
    base: BaseHazard
    loglik: float


def gamma_frailty_fit(cohort, r: int = 1, K: int = 1, seed: int = 0, rounds: int = 4) -> GammaFrailtyFit:
    """Maximum-likelihood gamma frailty regression by randomized simplex search."""
    ev = cohort.event_labels == r
    if not ev.any():
        raise BaselineError(f"no events of type {r}")
    t_min, t_max = infer_time_bounds(cohort)
    p = cohort.n_covariates
    rate0 = ev.sum() / cohort.event_times.sum()

    def unpack(x):
        return np.exp(x[0]), x[1:1 + p], BaseHazard(t_min, t_max, np.exp(x[1 + p:]))

    # the bases do not depend on the parameters
    shape = BaseHazard(t_min, t_max, np.ones(K + 1))
    cum_basis = shape.cumulative_basis(cohort.event_times)
    rate_basis = shape.basis(cohort.event_times[ev])
    z = cohort.covariates

    def f(x):
        if x[0] > 30:
            return np.inf
        a, b, xi = np.exp(x[0]), x[1:1 + p], np.exp(x[1 + p:])
        eta = z @ b
        lg = np.log1p(cum_basis @ xi * np.exp(eta) / a)
        with np.errstate(divide="ignore", over="ignore"):
            v = np.sum(np.log(rate_basis @ xi)) + np.sum(eta[ev]) - a * np.sum(lg) - np.sum(lg[ev])
        return -v if np.isfinite(v) else np.inf

    x0 = np.concatenate([[0.0], np.zeros(p), np.full(K + 1, np.log(rate0))])
    amps = tuple(0.5 * 0.5**k for k in range(rounds))
    x, fx, _ = randomized_simplex(f, x0, np.random.default_rng(seed), amps, 0.1, 1e-9)
    a, b, h = unpack(x)
    return GammaFrailtyFit(float(a), b, h, -float(fx))
