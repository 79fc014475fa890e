"""Data log-likelihoods and the MAP + AIC objective.

The latent-class likelihood of a cohort is

    L = sum_i log lambda_{r_i}(t_i)
        + sum_i log sum_l w_l exp(beta_{r_i}^l . z_i - sum_{r=0}^R Lambda_r(t_i) exp(beta_r^l . z_i))

with ``z_i`` augmented by a leading 1 and ``beta_0 = 0`` unless censoring
coefficients are free.  The class mixture is evaluated with log-sum-exp.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .hazard import cumulative_basis, kernel_weights, knot_times, kernel_width
from .models import GaussianFrailtyModel, LatentClassModel, n_params


class LikelihoodError(ArithmeticError):
    """Non-finite likelihood contribution."""


@dataclass(frozen=True)
class PenaltyConfig:
    """Gaussian prior of variance ``prior_variance`` on regression and frailty
    coefficients, flat priors on knot values and class weights, plus the AIC
    parameter count."""

    prior_variance: float = 1.0
    aic: bool = True


class LatentEvaluator:
    """Cached per-cohort quantities for repeated latent-class likelihood calls.

    Kernel weights and per-knot cumulative integrals at every observed time are
    computed once; afterwards ``lambda_r(t_i)`` and ``Lambda_r(t_i)`` are matrix
    products with the knot values.
    """

    def __init__(self, cohort, t_min: float, t_max: float, K: int):
        self.cohort = cohort
        self.t_min, self.t_max, self.K = float(t_min), float(t_max), int(K)
        t = cohort.event_times
        self.labels = cohort.event_labels
        self.za = cohort.augmented()
        self.phi = kernel_weights(t, knot_times(t_min, t_max, K), kernel_width(t_min, t_max, K))
        self.cum = cumulative_basis(t, t_min, t_max, K)
        self.n = cohort.n_individuals
        self._rows = np.arange(self.n)

    @classmethod
    def for_model(cls, model, cohort):
        h = model.base_hazards[0]
        return cls(cohort, h.t_min, h.t_max, h.K)

    def rates_at_events(self, xi: np.ndarray) -> np.ndarray:
        """``lambda_{r_i}(t_i)`` for knot matrix ``xi`` of shape (K+1, R+1)."""
        return np.einsum("ik,ki->i", self.phi, xi[:, self.labels])

    def cumulative(self, xi: np.ndarray) -> np.ndarray:
        """(N, R+1) matrix of ``Lambda_r(t_i)``."""
        return self.cum @ xi

    def censoring_terms(self, xi0: np.ndarray) -> np.ndarray:
        """Per-individual end-of-trial contribution when censoring coefficients are zero."""
        lam0 = self.phi @ xi0
        with np.errstate(divide="ignore"):
            out = np.where(self.labels == 0, np.log(lam0), 0.0)
        return out - self.cum @ xi0

    def risk_terms(self, log_w: np.ndarray, coef: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Per-individual true-risk contribution.

        ``coef`` has shape (L, R, p+1) for risks 1..R and ``xi`` shape (K+1, R).
        """
        lab = self.labels
        lam_all = self.phi @ xi  # (N, R)
        event = lab > 0
        lam = np.ones(self.n)
        lam[event] = lam_all[self._rows[event], lab[event] - 1]
        Lam = self.cum @ xi  # (N, R)
        eta = np.einsum("iq,lrq->ilr", self.za, coef)  # (N, L, R)
        with np.errstate(over="ignore", invalid="ignore"):
            load = Lam[:, None, :] * np.exp(eta)
            load = np.where(Lam[:, None, :] > 0, load, 0.0)
            expo = log_w[None, :] - load.sum(axis=2)
        ev = eta[self._rows[event], :, lab[event] - 1]
        expo[event] += ev
        with np.errstate(divide="ignore", invalid="ignore"):
            mix = logsumexp(expo, axis=1)
            return np.log(lam) + mix

    def free_terms(self, log_w: np.ndarray, coef: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Per-individual total contribution with censoring treated as a risk.

        ``coef`` has shape (L, R+1, p+1) and ``xi`` shape (K+1, R+1).
        """
        lab = self.labels
        lam = self.rates_at_events(xi)
        Lam = self.cum @ xi
        eta = np.einsum("iq,lrq->ilr", self.za, coef)
        with np.errstate(over="ignore", invalid="ignore"):
            load = Lam[:, None, :] * np.exp(eta)
            load = np.where(Lam[:, None, :] > 0, load, 0.0)
            expo = log_w[None, :] - load.sum(axis=2) + eta[self._rows, :, lab]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(lam) + logsumexp(expo, axis=1)

    def terms(self, model: LatentClassModel) -> np.ndarray:
        with np.errstate(divide="ignore"):
            log_w = np.log(model.weights)
        xi = model.knot_matrix
        if model.free_censoring:
            return self.free_terms(log_w, model.coefficients, xi)
        return self.censoring_terms(xi[:, 0]) + self.risk_terms(
            log_w, model.coefficients[:, 1:], xi[:, 1:]
        )


def _check_finite(terms: np.ndarray, what: str) -> float:
    bad = ~np.isfinite(terms)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise LikelihoodError(f"{what}: non-finite contribution {terms[i]} from individual {i}")
    return float(np.sum(terms))


def _check_dims(model, cohort):
    if model.p != cohort.n_covariates:
        raise ValueError(f"model has {model.p} covariates, cohort has {cohort.n_covariates}")
    if model.R < cohort.n_risks:
        raise ValueError(f"model has {model.R} risks, cohort has labels up to {cohort.n_risks}")


def loglik_latent(model: LatentClassModel, cohort, evaluator: LatentEvaluator | None = None) -> float:
    """Log-likelihood of ``cohort`` under a latent-class model (censoring term included)."""
    _check_dims(model, cohort)
    ev = evaluator or LatentEvaluator.for_model(model, cohort)
    return _check_finite(ev.terms(model), "latent-class likelihood")


def loglik_latent_parts(model: LatentClassModel, cohort) -> tuple[float, float]:
    """``(L_0, L_risks)``: end-of-trial and true-risk parts (default censoring mode only)."""
    _check_dims(model, cohort)
    if model.free_censoring:
        raise ValueError("the split is defined only for covariate-independent censoring")
    ev = LatentEvaluator.for_model(model, cohort)
    xi = model.knot_matrix
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weights)
    l0 = _check_finite(ev.censoring_terms(xi[:, 0]), "censoring likelihood")
    lr = _check_finite(ev.risk_terms(log_w, model.coefficients[:, 1:], xi[:, 1:]), "risk likelihood")
    return l0, lr


# ---------------------------------------------------------------------------
# Gaussian frailty


def _gauss_pieces(model: GaussianFrailtyModel, cohort, evaluator=None):
    ev = evaluator or LatentEvaluator.for_model(model, cohort)
    xi = np.column_stack([b.knot_values for b in model.base_hazards])
    za = ev.za
    R, q = model.R, model.p + 1
    Cb = model.covariance.reshape(R, q, R, q)
    Kz = np.einsum("ip,rpsq,iq->irs", za, Cb, za)  # (N, R, R)
    mean_eta = za @ model.means.T  # (N, R)
    Lam = ev.cumulative(xi)  # (N, R+1)
    l0 = ev.censoring_terms(xi[:, 0])
    lab = cohort.event_labels
    lam = np.ones(cohort.n_individuals)
    event = lab > 0
    lam[event] = ev.rates_at_events(xi)[event]
    return ev, Kz, mean_eta, Lam, l0, lab, lam


def loglik_gaussian_lb(model: GaussianFrailtyModel, cohort, evaluator=None) -> float:
    """Jensen lower bound of the Gaussian-frailty log-likelihood (closed form).

    Individual ``i`` with ``r_i > 0`` contributes
    ``log lambda_{r_i} + m_{r_i} + K_{r_i r_i}/2 - sum_s Lambda_s exp(m_s + K_{r_i s} + K_{ss}/2)``
    with ``m_s = beta_s . z_i`` and ``K = K(z_i)``; censored individuals drop
    the leading terms and the ``K_{r_i s}`` shift.
    """
    _check_dims(model, cohort)
    if model.covariance.size and np.linalg.eigvalsh(model.covariance).min() < -1e-10:
        raise ValueError("covariance is indefinite")
    ev, Kz, m, Lam, l0, lab, lam = _gauss_pieces(model, cohort, evaluator)
    n = cohort.n_individuals
    rows = np.arange(n)
    event = lab > 0
    diag = np.einsum("irr->ir", Kz)
    shift = np.zeros_like(m)
    shift[event] = Kz[rows[event], lab[event] - 1, :]
    with np.errstate(over="ignore"):
        load = np.sum(Lam[:, 1:] * np.exp(m + shift + 0.5 * diag), axis=1)
    lead = np.zeros(n)
    lead[event] = m[rows[event], lab[event] - 1] + 0.5 * diag[rows[event], lab[event] - 1]
    with np.errstate(divide="ignore"):
        terms = l0 + np.log(lam) + lead - load
    return _check_finite(terms, "Gaussian lower bound")


def _sqrt_psd(Kz: np.ndarray, offset: int = 0) -> np.ndarray:
    try:
        vals, vecs = np.linalg.eigh(Kz)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise LikelihoodError(f"eigendecomposition failed near individual {offset}: {exc}") from exc
    if np.any(~np.isfinite(vals)):
        i = offset + int(np.argmax(~np.isfinite(vals).all(axis=-1)))
        raise LikelihoodError(f"eigendecomposition failed for individual {i}")
    vals = np.clip(vals, 0.0, None)
    return np.einsum("...ij,...j,...kj->...ik", vecs, np.sqrt(vals), vecs)


def loglik_gaussian_mc(model: GaussianFrailtyModel, cohort, seed: int = 0,
                       return_se: bool = False, chunk: int = 2_000_000):
    """Monte-Carlo estimate of the exact Gaussian-frailty log-likelihood.

    The R-dimensional standard-normal integral of each individual is averaged
    over ``model.mc_samples`` common random draws ``y``, mapped through the
    symmetric square root of ``K(z_i)``.  With ``return_se`` a delta-method
    standard error of the total is returned as well.
    """
    _check_dims(model, cohort)
    M = int(model.mc_samples)
    if M < 100:
        raise ValueError("mc_samples must be at least 100")
    ev, Kz, m, Lam, l0, lab, lam = _gauss_pieces(model, cohort)
    n, R = m.shape
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((M, R))
    rows = np.arange(n)
    event = lab > 0
    shift = np.zeros_like(m)
    shift[event] = Kz[rows[event], lab[event] - 1, :]
    lead = np.zeros(n)
    lead[event] = m[rows[event], lab[event] - 1] + 0.5 * Kz[rows[event], lab[event] - 1, lab[event] - 1]
    c = m + shift
    log_int = np.empty(n)
    var_rel = np.empty(n)
    step = max(1, chunk // max(M, 1))
    for s in range(0, n, step):
        sl = slice(s, min(n, s + step))
        root = _sqrt_psd(Kz[sl], s)
        x = np.einsum("irs,ms->imr", root, y)
        with np.errstate(over="ignore"):
            expo = -np.sum(Lam[sl, None, 1:] * np.exp(c[sl, None, :] + x), axis=2)
        top = expo.max(axis=1, keepdims=True)
        vals = np.exp(expo - top)
        mean = vals.mean(axis=1)
        log_int[sl] = np.log(mean) + top[:, 0]
        var_rel[sl] = vals.var(axis=1, ddof=1) / (M * mean**2)
    with np.errstate(divide="ignore"):
        terms = l0 + np.log(lam) + lead + log_int
    total = _check_finite(terms, "Gaussian Monte-Carlo likelihood")
    if return_se:
        return total, float(np.sqrt(np.sum(var_rel)))
    return total


# ---------------------------------------------------------------------------
# objective


def log_prior(model, penalty: PenaltyConfig = PenaltyConfig()) -> float:
    """Gaussian log-prior (without normalization) of the coefficient parameters."""
    if isinstance(model, LatentClassModel):
        coef = model.coefficients
        return -0.5 * float(np.sum(coef**2)) / penalty.prior_variance
    if isinstance(model, GaussianFrailtyModel):
        iu = np.triu_indices_from(model.covariance)
        ss = np.sum(model.means**2) + np.sum(model.covariance[iu] ** 2)
        return -0.5 * float(ss) / penalty.prior_variance
    raise TypeError(f"unsupported model {type(model).__name__}")


def model_n_params(model) -> int:
    if isinstance(model, LatentClassModel):
        n = n_params("latent", model.L, model.K, model.R, model.p)
        if model.free_censoring:
            n += model.L * (model.p + 1)
        return n
    return n_params("gaussian", 1, model.K, model.R, model.p)


def loglik(model, cohort, seed: int = 0) -> float:
    if isinstance(model, LatentClassModel):
        return loglik_latent(model, cohort)
    if model.use_lower_bound:
        return loglik_gaussian_lb(model, cohort)
    return loglik_gaussian_mc(model, cohort, seed=seed)


def psi_objective(model, cohort, penalty: PenaltyConfig = PenaltyConfig(), seed: int = 0) -> float:
    """``n_par - loglik - log_prior``; smaller is better."""
    npar = model_n_params(model) if penalty.aic else 0
    return npar - loglik(model, cohort, seed=seed) - log_prior(model, penalty)
