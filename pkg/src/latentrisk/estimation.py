"""MAP fitting of latent-class models, (L, K) model selection and error bars."""
from __future__ import annotations

import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .hazard import BaseHazard, infer_time_bounds
from .likelihood import LatentEvaluator, PenaltyConfig, log_prior, loglik_latent, model_n_params
from .inference import effective_classes
from .models import LatentClassModel
from .optimize import nelder_mead, randomized_simplex
from ._kernels import mixture_loglik_sum

log = logging.getLogger("latentrisk")

RATE_FLOOR = 1e-8


class FitError(RuntimeError):
    pass


def default_amplitudes(start=0.5, factor=0.5, rounds=8):
    return tuple(start * factor**k for k in range(rounds))


@dataclass(frozen=True)
class FitConfig:
    restarts: int = 16
    simplex_max_iter: int | None = None
    simplex_tolerance: float = 1e-8
    amplitudes: tuple = default_amplitudes()
    init_coefficient_noise: float = 0.05
    initial_step: float = 0.1
    adaptive_simplex: bool = False
    rng_seed: int = 0
    threads: int = 1
    free_censoring: bool = False
    penalty: PenaltyConfig = PenaltyConfig()
    error_bars: bool = True
    warm_start: bool = False

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        amps = tuple(float(a) for a in self.amplitudes)
        if any(a <= b for a, b in zip(amps, amps[1:])) or any(a < 0 for a in amps):
            raise ValueError("amplitudes must be nonnegative and strictly decreasing")
        object.__setattr__(self, "amplitudes", amps)


# ---------------------------------------------------------------------------
# parameter vector <-> model


class LatentPacker:
    """Maps a latent-class model to the free optimization vector and back.

    Free entries, in order: coefficients (the frailty of class 0 is pinned to 0
    for every modelled risk), ``L-1`` weight logits (the last logit is 0) and
    log knot values.  Without free censoring the censoring knots are held
    fixed and the censoring coefficients are zero.
    """

    def __init__(self, L, R, p, K, t_min, t_max, free_censoring=False, censor_knots=None):
        self.L, self.R, self.p, self.K = L, R, p, K
        self.q = p + 1
        self.t_min, self.t_max = t_min, t_max
        self.free = free_censoring
        self.r0 = 0 if free_censoring else 1  # first optimized risk
        nr = R + 1 - self.r0
        mask = np.ones((L, nr, self.q), dtype=bool)
        mask[0, :, 0] = False
        self.coef_mask = mask
        self.n_coef = int(mask.sum())
        self.n_logit = L - 1
        self.n_knot = (K + 1) * nr
        self.size = self.n_coef + self.n_logit + self.n_knot
        self.censor_knots = None if censor_knots is None else np.asarray(censor_knots, float)

    def names(self):
        out = []
        for l in range(self.L):
            for j in range(self.R + 1 - self.r0):
                for mu in range(self.q):
                    if self.coef_mask[l, j, mu]:
                        out.append(f"beta[class={l + 1},risk={j + self.r0},mu={mu}]")
        out += [f"logit[class={l + 1}]" for l in range(self.n_logit)]
        out += [f"log_xi[risk={j + self.r0},k={k}]" for j in range(self.R + 1 - self.r0)
                for k in range(self.K + 1)]
        return out

    def split(self, x):
        x = np.asarray(x, dtype=float)
        coef = np.zeros(self.coef_mask.shape)
        coef[self.coef_mask] = x[: self.n_coef]
        logits = np.append(x[self.n_coef: self.n_coef + self.n_logit], 0.0)
        log_w = logits - np.logaddexp.reduce(logits)
        log_xi = x[self.n_coef + self.n_logit:].reshape(-1, self.K + 1).T
        return log_w, coef, log_xi

    def pack(self, model: LatentClassModel) -> np.ndarray:
        coef = model.coefficients[:, self.r0:]
        logits = np.log(model.weights) - np.log(model.weights[-1])
        xi = model.knot_matrix[:, self.r0:]
        with np.errstate(divide="ignore"):
            log_xi = np.log(xi)
        return np.concatenate([coef[self.coef_mask], logits[:-1], log_xi.T.ravel()])

    def unpack(self, x, normalization=None) -> LatentClassModel:
        log_w, coef, log_xi = self.split(x)
        w = np.exp(log_w)
        w /= w.sum()
        xi = np.exp(log_xi)
        if not self.free:
            full = np.zeros((self.L, self.R + 1, self.q))
            full[:, 1:] = coef
            coef = full
            xi = np.column_stack([self.censor_knots, xi])
        hz = tuple(BaseHazard(self.t_min, self.t_max, xi[:, r]) for r in range(self.R + 1))
        return LatentClassModel(w, coef, hz, free_censoring=self.free, normalization=normalization)


class LatentObjective:
    """Fast ``Psi(x)`` on the packed vector for a fixed cohort."""

    def __init__(self, packer: LatentPacker, evaluator: LatentEvaluator, penalty: PenaltyConfig,
                 n_par: int):
        self.packer = packer
        self.ev = evaluator
        self.penalty = penalty
        self.n_par = n_par if penalty.aic else 0
        self.censor_ll = 0.0
        if not packer.free:
            self.censor_ll = float(np.sum(evaluator.censoring_terms(packer.censor_knots)))
        self.n_calls = 0

    def __call__(self, x) -> float:
        self.n_calls += 1
        log_w, coef, log_xi = self.packer.split(x)
        with np.errstate(over="ignore"):
            xi = np.exp(log_xi)
        ev = self.ev
        ll = mixture_loglik_sum(ev.za, ev.labels, 0 if self.packer.free else 1, ev.phi, ev.cum,
                                log_w, coef, xi) + self.censor_ll
        if not np.isfinite(ll):
            return np.inf
        prior = 0.5 * float(np.sum(coef * coef)) / self.penalty.prior_variance
        return self.n_par - ll + prior

    def _terms(self, x):
        log_w, coef, log_xi = self.packer.split(x)
        with np.errstate(over="ignore"):
            xi = np.exp(log_xi)
        if self.packer.free:
            return self.ev.free_terms(log_w, coef, xi), coef
        return self.ev.risk_terms(log_w, coef, xi), coef

    def delta(self, x, ref) -> float:
        """``Psi(x) - Psi(ref)`` summed per individual, so small steps keep their digits."""
        key = np.asarray(ref, dtype=float).tobytes()
        if getattr(self, "_ref_key", None) != key:
            self._ref_key, self._ref = key, self._terms(ref)
        (t1, c1), (t0, c0) = self._terms(x), self._ref
        if not (np.all(np.isfinite(t1)) and np.all(np.isfinite(t0))):
            return self(x) - self(ref)
        d_prior = 0.5 * math.fsum(((c1 - c0) * (c1 + c0)).ravel()) / self.penalty.prior_variance
        return d_prior - math.fsum(t1 - t0)


# ---------------------------------------------------------------------------
# initialization


def init_rates(cohort) -> np.ndarray:
    """Constant-rate maximum likelihood per label: events of type r over total time."""
    total = float(np.sum(cohort.event_times))
    counts = cohort.event_counts().astype(float)
    if total <= 0:
        raise FitError("total observed time is zero")
    xi = counts / total
    floor = RATE_FLOOR / float(np.mean(cohort.event_times))
    for r in np.flatnonzero(xi[1:] == 0) + 1:
        warnings.warn(f"no events of type {r}; base rate floored at {floor:.3g}", stacklevel=3)
    return np.maximum(xi, floor)


def init_model(cohort, L: int, K: int, noise_seed=0, noise: float = 0.05,
               free_censoring: bool = False, time_bounds=None) -> LatentClassModel:
    """Rational starting point: constant base rates, equal weights, small random coefficients."""
    if L < 1 or K < 1:
        raise ValueError("L and K must be >= 1")
    rng = noise_seed if isinstance(noise_seed, np.random.Generator) else np.random.default_rng(noise_seed)
    t_min, t_max = time_bounds or infer_time_bounds(cohort)
    R, p = cohort.n_risks, cohort.n_covariates
    xi = init_rates(cohort)
    coef = noise * rng.standard_normal((L, R + 1, p + 1))
    coef[0, :, 0] = 0.0
    if not free_censoring:
        coef[:, 0] = 0.0
    hz = tuple(BaseHazard(t_min, t_max, np.full(K + 1, xi[r])) for r in range(R + 1))
    return LatentClassModel(np.full(L, 1.0 / L), coef, hz, free_censoring=free_censoring,
                            normalization=cohort.normalization)


def fit_censoring_knots(evaluator: LatentEvaluator, xi0: float, tol=1e-10) -> np.ndarray:
    """Maximize the end-of-trial likelihood over its own knots (separable from the rest)."""
    f = lambda u: -float(np.sum(evaluator.censoring_terms(np.exp(u))))  # noqa: E731
    x = np.full(evaluator.K + 1, np.log(xi0))
    best = f(x)
    for _ in range(20):
        res = nelder_mead(f, x, step=0.5, ftol=tol)
        if res.fun >= best - tol:
            x = res.x if res.fun < best else x
            break
        x, best = res.x, res.fun
    return np.exp(x)


# ---------------------------------------------------------------------------
# error bars


@dataclass
class ErrorBars:
    names: list
    sigma: np.ndarray  # NaN where absent
    variance: np.ndarray  # diagonal of C
    covariance: np.ndarray
    curvature: np.ndarray  # C^{-1}
    condition_number: float
    absent: list = field(default_factory=list)

    def to_dict(self):
        return {
            "names": list(self.names),
            "sigma": [None if not np.isfinite(s) else float(s) for s in self.sigma],
            "variance": [None if not np.isfinite(v) else float(v) for v in self.variance],
            "condition_number": float(self.condition_number),
            "absent": list(self.absent),
        }


def probe_epsilons(n=10, first=1e-3):
    return first * 0.5 ** np.arange(n)


def probe_curvature(f, x, epsilons=None, symmetric: bool = True) -> np.ndarray:
    """Curvature matrix of ``f`` at ``x`` from single and pairwise coordinate probes.

    For each step ``e``: ``H_kk = 2 dF_k / e^2`` and
    ``H_kl = (dF_kl - dF_k - dF_l) / e^2`` with ``dF`` the change of ``f``
    after moving ``e`` along axis ``k`` (and ``l``).  Estimates are averaged over
    the steps; with ``symmetric`` the probes are repeated with ``-e`` and
    averaged too, which removes the gradient and cubic contributions.
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    eps_list = probe_epsilons() if epsilons is None else np.asarray(epsilons, dtype=float)
    signs = (1.0, -1.0) if symmetric else (1.0,)
    f0 = f(x)
    delta = getattr(f, "delta", None) or (lambda y, _: f(y) - f0)
    H = np.zeros((d, d))
    count = 0
    for eps in eps_list:
        for s in signs:
            e = s * eps
            single = np.empty(d)
            for k in range(d):
                xk = x.copy()
                xk[k] += e
                single[k] = delta(xk, x)
            Hk = np.diag(2.0 * single / e**2)
            for k in range(d):
                for l in range(k + 1, d):
                    xkl = x.copy()
                    xkl[k] += e
                    xkl[l] += e
                    v = (delta(xkl, x) - single[k] - single[l]) / e**2
                    Hk[k, l] = Hk[l, k] = v
            H += Hk
            count += 1
    return H / count


def curvature_error_bars(f, x, names=None, epsilons=None, symmetric=True, rtol=1e-5) -> ErrorBars:
    """Invert the probed curvature; parameters in flat or negative directions get no error bar."""
    H = probe_curvature(f, x, epsilons, symmetric)
    H = 0.5 * (H + H.T)
    d = H.shape[0]
    names = list(names) if names is not None else [f"theta[{k}]" for k in range(d)]
    vals, vecs = np.linalg.eigh(H)
    top = max(np.max(np.abs(vals)), np.finfo(float).tiny)
    good = vals > rtol * top
    cond = float(top / vals[good].min()) if good.any() else np.inf
    if not good.all():
        cond = np.inf
    cov = (vecs[:, good] / vals[good]) @ vecs[:, good].T
    bad_dirs = vecs[:, ~good]
    affected = np.any(np.abs(bad_dirs) > 1e-6, axis=1) if bad_dirs.size else np.zeros(d, bool)
    var = np.diag(cov).copy()
    var[affected] = np.nan
    sigma = np.sqrt(np.where(var >= 0, var, np.nan))
    absent = [names[k] for k in np.flatnonzero(~np.isfinite(sigma))]
    return ErrorBars(names, sigma, var, cov, H, cond, absent)


def error_bars(model: LatentClassModel, cohort, penalty: PenaltyConfig = PenaltyConfig(),
               epsilons=None, symmetric=True) -> ErrorBars:
    """Posterior standard deviations of the free parameters at a minimum of Psi."""
    packer = _packer_for(model, cohort)
    h = model.base_hazards[0]
    ev = LatentEvaluator(cohort, h.t_min, h.t_max, h.K)
    obj = LatentObjective(packer, ev, penalty, model_n_params(model))
    return curvature_error_bars(obj, packer.pack(model), packer.names(), epsilons, symmetric)


def _packer_for(model: LatentClassModel, cohort=None) -> LatentPacker:
    h = model.base_hazards[0]
    return LatentPacker(model.L, model.R, model.p, model.K, h.t_min, h.t_max,
                        free_censoring=model.free_censoring,
                        censor_knots=None if model.free_censoring else model.base_hazards[0].knot_values)


# ---------------------------------------------------------------------------
# fitting


@dataclass
class FitReport:
    best_model: LatentClassModel
    psi: float
    loglik: float
    n_par: int
    per_restart_psis: list
    error_bars: ErrorBars | None
    wall_time: float
    L: int
    K: int
    traces: list = field(default_factory=list)
    n_evaluations: int = 0

    @property
    def condition_number(self):
        return None if self.error_bars is None else self.error_bars.condition_number

    def to_dict(self):
        return {
            "L": self.L,
            "K": self.K,
            "psi": float(self.psi),
            "loglik": float(self.loglik),
            "n_par": int(self.n_par),
            "per_restart_psis": [float(v) for v in self.per_restart_psis],
            "error_bars": None if self.error_bars is None else self.error_bars.to_dict(),
            "wall_time": float(self.wall_time),
            "n_evaluations": int(self.n_evaluations),
            "max_abs_censoring_coefficient": (
                float(np.max(np.abs(self.best_model.coefficients[:, 0, 1:]), initial=0.0))
                if isinstance(self.best_model, LatentClassModel) else None
            ),
        }


def canonicalize(model: LatentClassModel) -> LatentClassModel:
    """Order the non-reference classes by descending weight, then coefficients.

    Class 0 carries the pinned frailties and keeps its slot; permuting the
    others is an exact symmetry of Psi.
    """
    if model.L <= 2:
        return model
    rest = list(range(1, model.L))
    key = lambda l: (-model.weights[l], tuple(model.coefficients[l].ravel()))  # noqa: E731
    order = [0] + sorted(rest, key=key)
    return model.permute(order)


def _stream(seed, cell, restart):
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(*cell, restart)))


def _run_restart(args):
    cohort, L, K, config, restart, censor_knots, bounds, start = args
    rng = _stream(config.rng_seed, (L, K), restart)
    packer = LatentPacker(L, cohort.n_risks, cohort.n_covariates, K, *bounds,
                          free_censoring=config.free_censoring, censor_knots=censor_knots)
    ev = LatentEvaluator(cohort, *bounds, K)
    npar = n_par_for(L, K, cohort.n_risks, cohort.n_covariates, config.free_censoring)
    obj = LatentObjective(packer, ev, config.penalty, npar)
    if start is not None and restart == 0:
        x0 = packer.pack(start)
    else:
        m0 = init_model(cohort, L, K, rng, config.init_coefficient_noise, config.free_censoring,
                        time_bounds=bounds)
        x0 = packer.pack(m0)

    def progress(k, amp, best):
        log.info("L=%d K=%d restart=%d round=%d amplitude=%.4g psi=%.6f", L, K, restart, k, amp, best)

    x, fx, trace = randomized_simplex(
        obj, x0, rng, config.amplitudes, config.initial_step, config.simplex_tolerance,
        config.simplex_max_iter, config.adaptive_simplex, progress,
    )
    return x, fx, trace, obj(x0)


def n_par_for(L, K, R, p, free_censoring=False):
    from .models import n_params

    n = n_params("latent", L, K, R, p)
    return n + (L * (p + 1) if free_censoring else 0)


def fit_map(cohort, L: int, K: int, config: FitConfig = FitConfig(), start=None) -> FitReport:
    """Minimize Psi over latent-class models with ``L`` classes and ``K+1`` knots per risk."""
    t0 = time.perf_counter()
    if cohort.n_individuals == 0:
        raise FitError("empty cohort")
    if not np.any(cohort.event_labels > 0):
        raise FitError("cohort has no events of a true risk")
    bounds = infer_time_bounds(cohort)
    censor_knots = None
    if not config.free_censoring:
        ev0 = LatentEvaluator(cohort, *bounds, K)
        censor_knots = fit_censoring_knots(ev0, init_rates(cohort)[0])
    jobs = [(cohort, L, K, config, k, censor_knots, bounds, start) for k in range(config.restarts)]
    if config.threads > 1 and config.restarts > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(_run_restart, jobs))
    else:
        results = [_run_restart(j) for j in jobs]
    psis = [r[1] for r in results]
    finite = [k for k, v in enumerate(psis) if np.isfinite(v)]
    if not finite:
        raise FitError(f"all {len(psis)} restarts produced non-finite Psi")
    best = min(finite, key=lambda k: psis[k])
    packer = LatentPacker(L, cohort.n_risks, cohort.n_covariates, K, *bounds,
                          free_censoring=config.free_censoring, censor_knots=censor_knots)
    model = canonicalize(packer.unpack(results[best][0], normalization=cohort.normalization))
    ll = loglik_latent(model, cohort)
    npar = model_n_params(model)
    psi = (npar if config.penalty.aic else 0) - ll - log_prior(model, config.penalty)
    bars = error_bars(model, cohort, config.penalty) if config.error_bars else None
    return FitReport(
        best_model=model,
        psi=float(psi),
        loglik=float(ll),
        n_par=npar,
        per_restart_psis=[float(v) for v in psis],
        error_bars=bars,
        wall_time=time.perf_counter() - t0,
        L=L,
        K=K,
        traces=[r[2] for r in results],
        n_evaluations=sum(r[2].n_eval for r in results),
    )


# ---------------------------------------------------------------------------
# model selection


@dataclass
class GridCell:
    L: int
    K: int
    psi: float | None
    n_par: int | None
    effective_classes: float | None
    error: str | None = None
    report: FitReport | None = None

    def to_dict(self):
        return {"L": self.L, "K": self.K, "psi": self.psi, "n_par": self.n_par,
                "effective_classes": self.effective_classes, "error": self.error}


@dataclass
class SelectionReport:
    grid: list
    chosen: tuple
    n_individuals: int

    def cell(self, L, K) -> GridCell:
        for c in self.grid:
            if (c.L, c.K) == (L, K):
                return c
        raise KeyError((L, K))

    @property
    def best_report(self) -> FitReport:
        return self.cell(*self.chosen).report

    @property
    def runner_up(self):
        ok = sorted((c for c in self.grid if c.psi is not None), key=lambda c: c.psi)
        return ok[1] if len(ok) > 1 else None

    @property
    def delta_psi(self):
        ru = self.runner_up
        return None if ru is None else ru.psi - self.cell(*self.chosen).psi

    @property
    def delta_psi_per_n(self):
        d = self.delta_psi
        return None if d is None else d / self.n_individuals

    @property
    def likelihood_ratio(self):
        d = self.delta_psi
        return None if d is None else float(np.exp(min(d, 700.0)))

    def to_dict(self):
        return {
            "grid": [c.to_dict() for c in self.grid],
            "chosen": {"L": self.chosen[0], "K": self.chosen[1]},
            "n_individuals": self.n_individuals,
            "delta_psi": self.delta_psi,
            "delta_psi_per_n": self.delta_psi_per_n,
            "likelihood_ratio": self.likelihood_ratio,
        }


def select_model(cohort, L_grid, K_grid, config: FitConfig = FitConfig()) -> SelectionReport:
    """Fit every (L, K) cell and choose the one with the smallest Psi."""
    L_grid, K_grid = list(L_grid), list(K_grid)
    if not L_grid or not K_grid:
        raise ValueError("grids must be nonempty")
    cells = []
    prev = {}
    for K in K_grid:
        for L in L_grid:
            start = None
            if config.warm_start and (L - 1, K) in prev:
                start = _grow(prev[(L - 1, K)])
            try:
                rep = fit_map(cohort, L, K, config, start=start)
            except (FitError, ArithmeticError, ValueError) as exc:
                log.warning("cell L=%d K=%d failed: %s", L, K, exc)
                cells.append(GridCell(L, K, None, None, None, str(exc)))
                continue
            prev[(L, K)] = rep.best_model
            cells.append(GridCell(L, K, rep.psi, rep.n_par,
                                  effective_classes(rep.best_model.weights), None, rep))
    ok = [c for c in cells if c.psi is not None]
    if not ok:
        raise FitError("every grid cell failed")
    best = min(ok, key=lambda c: c.psi)
    return SelectionReport(cells, (best.L, best.K), cohort.n_individuals)


def _grow(model: LatentClassModel) -> LatentClassModel:
    """Warm start for L+1 classes: split the largest class in two."""
    j = int(np.argmax(model.weights))
    w = np.append(model.weights, model.weights[j] / 2)
    w[j] /= 2
    coef = np.concatenate([model.coefficients, model.coefficients[j:j + 1]], axis=0)
    return model.replace(weights=w / w.sum(), coefficients=coef)


def with_config(config: FitConfig, **kw) -> FitConfig:
    return replace(config, **kw)


# ---------------------------------------------------------------------------
# Gaussian frailty


def fit_gaussian(cohort, K: int, config: FitConfig = FitConfig(), mc_refine: bool = False) -> FitReport:
    """MAP fit of the Gaussian-frailty model with the Jensen bound as likelihood.

    The covariance is parametrized by a lower-triangular factor so it stays
    positive semidefinite.  Mean frailties are pinned at zero because they are
    exactly redundant with the base-hazard scale.  With ``mc_refine`` the best
    point is polished once more on the Monte-Carlo likelihood.
    """
    from .likelihood import loglik_gaussian_lb, loglik_gaussian_mc
    from .models import GaussianFrailtyModel, n_params

    t0 = time.perf_counter()
    if not np.any(cohort.event_labels > 0):
        raise FitError("cohort has no events of a true risk")
    bounds = infer_time_bounds(cohort)
    R, p = cohort.n_risks, cohort.n_covariates
    q, d = p + 1, (p + 1) * R
    ev = LatentEvaluator(cohort, *bounds, K)
    xi0 = fit_censoring_knots(ev, init_rates(cohort)[0])
    tril = np.tril_indices(d)
    n_mean = R * p
    npar = n_params("gaussian", 1, K, R, p) if config.penalty.aic else 0

    def unpack(x, mc=False):
        means = np.zeros((R, q))
        means[:, 1:] = x[:n_mean].reshape(R, p)
        F = np.zeros((d, d))
        F[tril] = x[n_mean:n_mean + tril[0].size]
        C = F @ F.T
        xi = np.exp(x[n_mean + tril[0].size:]).reshape(R, K + 1)
        hz = (BaseHazard(*bounds, xi0),) + tuple(BaseHazard(*bounds, xi[r]) for r in range(R))
        return GaussianFrailtyModel(means, 0.5 * (C + C.T), hz, use_lower_bound=not mc,
                                    normalization=cohort.normalization)

    def psi(x, mc=False):
        try:
            m = unpack(x, mc)
            ll = loglik_gaussian_mc(m, cohort, seed=config.rng_seed) if mc else \
                loglik_gaussian_lb(m, cohort, ev)
        except (ArithmeticError, ValueError):
            return np.inf
        return npar - ll - log_prior(m, config.penalty)

    rates = init_rates(cohort)[1:]
    results = []
    for k in range(config.restarts):
        rng = _stream(config.rng_seed, (0, K), k)
        x0 = np.concatenate([
            config.init_coefficient_noise * rng.standard_normal(n_mean),
            config.init_coefficient_noise * rng.standard_normal(tril[0].size),
            np.repeat(np.log(rates), K + 1),
        ])
        results.append(randomized_simplex(psi, x0, rng, config.amplitudes, config.initial_step,
                                          config.simplex_tolerance, config.simplex_max_iter,
                                          config.adaptive_simplex))
    psis = [r[1] for r in results]
    if not np.any(np.isfinite(psis)):
        raise FitError(f"all {len(psis)} restarts produced non-finite Psi")
    x, fx, _ = results[int(np.nanargmin(psis))]
    if mc_refine:
        res = nelder_mead(lambda v: psi(v, True), x, config.initial_step, config.simplex_tolerance,
                          config.simplex_max_iter)
        x = res.x
    model = unpack(x, mc_refine)
    ll = loglik_gaussian_mc(model, cohort, seed=config.rng_seed) if mc_refine else \
        loglik_gaussian_lb(model, cohort, ev)
    return FitReport(
        best_model=model,
        psi=float(npar - ll - log_prior(model, config.penalty)),
        loglik=float(ll),
        n_par=n_params("gaussian", 1, K, R, p),
        per_restart_psis=[float(v) for v in psis],
        error_bars=None,
        wall_time=time.perf_counter() - t0,
        L=1,
        K=K,
        traces=[r[2] for r in results],
        n_evaluations=sum(r[2].n_eval for r in results),
    )
