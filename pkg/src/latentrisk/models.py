"""Parameter containers for the latent-class and Gaussian-frailty models."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .hazard import BaseHazard


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LatentClassModel:
    """Discrete mixture of proportional-hazards parameter sets over all risks.

    Attributes
    ----------
    weights : (L,) class sizes on the simplex
    coefficients : (L, R+1, p+1)
        ``coefficients[l, r]`` is ``(frailty, beta^1..beta^p)`` of class ``l``
        for risk ``r``.  Row ``r=0`` is the end-of-trial censoring risk; it is
        identically zero unless ``free_censoring`` is set.
    base_hazards : tuple of R+1 BaseHazard, index 0 is censoring
    free_censoring : bool
    """

    weights: np.ndarray
    coefficients: np.ndarray
    base_hazards: tuple
    free_censoring: bool = False
    normalization: object = None

    def __post_init__(self):
        w = _frozen(self.weights)
        b = _frozen(self.coefficients)
        if b.ndim != 3 or b.shape[0] != w.size:
            raise ValueError(f"coefficients must be (L, R+1, p+1); got {b.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must lie on the simplex; got {w}")
        hz = tuple(self.base_hazards)
        if len(hz) != b.shape[1]:
            raise ValueError(f"need {b.shape[1]} base hazards, got {len(hz)}")
        if len({(h.t_min, h.t_max, h.K) for h in hz}) != 1:
            raise ValueError("all base hazards must share time bounds and K")
        if not self.free_censoring and np.any(b[:, 0] != 0):
            raise ValueError("censoring coefficients must be zero unless free_censoring")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "coefficients", b)
        object.__setattr__(self, "base_hazards", hz)

    @property
    def L(self) -> int:
        return self.weights.size

    @property
    def R(self) -> int:
        return self.coefficients.shape[1] - 1

    @property
    def p(self) -> int:
        return self.coefficients.shape[2] - 1

    @property
    def K(self) -> int:
        return self.base_hazards[0].K

    @property
    def time_bounds(self):
        return self.base_hazards[0].t_min, self.base_hazards[0].t_max

    @property
    def knot_matrix(self) -> np.ndarray:
        """(K+1, R+1) knot values."""
        return np.column_stack([h.knot_values for h in self.base_hazards])

    def risk_coefficients(self, r: int) -> np.ndarray:
        """(L, p+1) coefficients of risk ``r``."""
        return self.coefficients[:, r]

    def replace(self, **kw) -> "LatentClassModel":
        return replace(self, **kw)

    def permute(self, order) -> "LatentClassModel":
        order = np.asarray(order)
        return self.replace(weights=self.weights[order], coefficients=self.coefficients[order])

    def shift_frailty(self, r: int, zeta: float) -> "LatentClassModel":
        """Apply the exact redundancy ``lambda_r -> lambda_r e^-zeta, frailty_r -> frailty_r + zeta``."""
        b = np.array(self.coefficients)
        b[:, r, 0] += zeta
        hz = list(self.base_hazards)
        hz[r] = hz[r].with_values(hz[r].knot_values * np.exp(-zeta))
        return self.replace(coefficients=b, base_hazards=tuple(hz))

    def with_reference_class(self) -> "LatentClassModel":
        """Shift frailties so class 0 has zero frailty for every risk (likelihood invariant)."""
        m = self
        for r in range(self.R + 1):
            if r == 0 and not self.free_censoring:
                continue
            z0 = -self.coefficients[0, r, 0]
            if z0 != 0.0:
                m = m.shift_frailty(r, z0)
        return m

    def raw_scale_coefficients(self) -> np.ndarray:
        """Coefficients expressed on the original (unnormalized) covariate scale.

        ``beta . (z - m)/s = (beta_0 - sum beta_mu m_mu / s_mu) + sum (beta_mu / s_mu) z_mu``.
        """
        b = np.array(self.coefficients)
        if self.normalization is None:
            return b
        m, s = self.normalization.means, self.normalization.sds
        out = b.copy()
        out[..., 1:] = b[..., 1:] / s
        out[..., 0] = b[..., 0] - np.sum(b[..., 1:] * m / s, axis=-1)
        return out


@dataclass(frozen=True)
class GaussianFrailtyModel:
    """Gaussian distribution of individual coefficient vectors over all true risks.

    Attributes
    ----------
    means : (R, p+1) centre of the distribution, row ``r-1`` for risk ``r``
    covariance : ((p+1)R, (p+1)R) covariance, blocks ordered by risk
    base_hazards : tuple of R+1 BaseHazard, index 0 is censoring
    mc_samples : Monte-Carlo sample count for the exact likelihood
    use_lower_bound : evaluate the likelihood through the Jensen bound
    """

    means: np.ndarray
    covariance: np.ndarray
    base_hazards: tuple
    mc_samples: int = 10_000
    use_lower_bound: bool = True
    normalization: object = field(default=None)

    def __post_init__(self):
        mu = _frozen(self.means)
        C = _frozen(self.covariance)
        if mu.ndim != 2:
            raise ValueError("means must be (R, p+1)")
        d = mu.size
        if C.shape != (d, d):
            raise ValueError(f"covariance must be {d}x{d}; got {C.shape}")
        if np.max(np.abs(C - C.T), initial=0.0) > 1e-10:
            raise ValueError("covariance must be symmetric")
        if d and np.linalg.eigvalsh(C).min() < -1e-10:
            raise ValueError("covariance must be positive semidefinite")
        hz = tuple(self.base_hazards)
        if len(hz) != mu.shape[0] + 1:
            raise ValueError(f"need {mu.shape[0] + 1} base hazards, got {len(hz)}")
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariance", C)
        object.__setattr__(self, "base_hazards", hz)

    @property
    def R(self) -> int:
        return self.means.shape[0]

    @property
    def p(self) -> int:
        return self.means.shape[1] - 1

    @property
    def K(self) -> int:
        return self.base_hazards[0].K

    def block(self, r: int, s: int) -> np.ndarray:
        """Sub-covariance ``C^{rs}`` for risks ``r, s`` in ``1..R``."""
        q = self.p + 1
        return self.covariance[(r - 1) * q:r * q, (s - 1) * q:s * q]

    def replace(self, **kw) -> "GaussianFrailtyModel":
        return replace(self, **kw)


def n_params(kind: str, L: int, K: int, R: int, p: int) -> int:
    """Parameter count entering the AIC term.

    latent: ``R L (p+1) + K R + L - 1``;
    gaussian: ``(p+1)^2 R^2 / 2 + 3 (p+1) R / 2 + K R``.
    """
    if min(K, R) < 0 or p < 0 or L < 1:
        raise ValueError("dimensions must be positive")
    if kind == "latent":
        return R * L * (p + 1) + K * R + L - 1
    if kind == "gaussian":
        q = (p + 1) * R
        return (q * q + 3 * q) // 2 + K * R
    raise ValueError(f"unknown model kind {kind!r}")
