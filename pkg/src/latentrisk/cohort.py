"""Survival data containers, CSV ingestion and synthetic cohort generation.

A cohort holds, for every individual, a covariate vector ``z_i``, the time
``t_i`` of the earliest observed event and its label ``r_i``.  Label 0 is
reserved for end-of-trial censoring; labels ``1..R`` are true risks.

Random numbers come from numpy's ``PCG64`` bit generator (``np.random.default_rng``),
which is portable and bit-reproducible across platforms for a given seed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class CohortError(ValueError):
    """Raised for malformed survival data."""


@dataclass(frozen=True)
class Normalization:
    """Per-covariate affine map ``z -> (z - mean) / sd`` applied to a cohort."""

    means: np.ndarray
    sds: np.ndarray

    def apply(self, z):
        return (np.asarray(z, dtype=float) - self.means) / self.sds

    def to_dict(self):
        return {"means": [float(m) for m in self.means], "sds": [float(s) for s in self.sds]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["means"], dtype=float), np.asarray(d["sds"], dtype=float))


@dataclass(frozen=True)
class Cohort:
    """Immutable survival data set.

    Parameters
    ----------
    covariates : (N, p) array
    event_times : (N,) array of nonnegative finite times
    event_labels : (N,) int array with values in ``{0, ..., n_risks}``
    n_risks : int, optional
        Number of true risks ``R``; inferred as the largest label when omitted.
    normalization : Normalization, optional
        Set when the covariates have been standardized.
    """

    covariates: np.ndarray
    event_times: np.ndarray
    event_labels: np.ndarray
    n_risks: int | None = None
    normalization: Normalization | None = None
    covariate_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        z = np.asarray(self.covariates, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        t = np.asarray(self.event_times, dtype=float).ravel()
        r = np.asarray(self.event_labels).ravel()
        if r.size and not np.all(np.equal(np.mod(r, 1), 0)):
            raise CohortError("event labels must be integers")
        r = r.astype(np.int64)
        if not (z.shape[0] == t.size == r.size):
            raise CohortError(
                f"inconsistent lengths: covariates {z.shape[0]}, times {t.size}, labels {r.size}"
            )
        if not np.all(np.isfinite(t)):
            raise CohortError("event times must be finite")
        if np.any(t < 0):
            raise CohortError(f"negative event time at index {int(np.argmax(t < 0))}")
        if not np.all(np.isfinite(z)):
            raise CohortError("covariates must be finite")
        n_risks = self.n_risks
        if n_risks is None:
            n_risks = int(r.max()) if r.size else 0
        if r.size and (r.min() < 0 or r.max() > n_risks):
            bad = int(np.argmax((r < 0) | (r > n_risks)))
            raise CohortError(f"event label {r[bad]} at index {bad} outside 0..{n_risks}")
        names = tuple(self.covariate_names) or tuple(f"z{j + 1}" for j in range(z.shape[1]))
        if len(names) != z.shape[1]:
            raise CohortError("covariate_names length does not match covariate columns")
        for arr in (z, t, r):
            arr.setflags(write=False)
        object.__setattr__(self, "covariates", z)
        object.__setattr__(self, "event_times", t)
        object.__setattr__(self, "event_labels", r)
        object.__setattr__(self, "n_risks", int(n_risks))
        object.__setattr__(self, "covariate_names", names)

    @property
    def n_individuals(self) -> int:
        return self.event_times.size

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def __len__(self):
        return self.n_individuals

    def augmented(self) -> np.ndarray:
        """Covariates with a leading constant column (the frailty slot)."""
        return np.column_stack([np.ones(self.n_individuals), self.covariates])

    def event_counts(self) -> np.ndarray:
        """Number of records per label ``0..R``."""
        return np.bincount(self.event_labels, minlength=self.n_risks + 1)

    def subset(self, mask) -> "Cohort":
        mask = np.asarray(mask)
        return Cohort(
            self.covariates[mask],
            self.event_times[mask],
            self.event_labels[mask],
            n_risks=self.n_risks,
            normalization=self.normalization,
            covariate_names=self.covariate_names,
        )

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "event", *self.covariate_names])
            for t, r, z in zip(self.event_times, self.event_labels, self.covariates):
                w.writerow([repr(float(t)), int(r), *(repr(float(v)) for v in z)])


def load_cohort(path, schema: Mapping[str, object] | None = None, n_risks: int | None = None) -> Cohort:
    """Read a cohort from CSV.

    The file needs a header row.  ``schema`` may override the column names
    (``{"time": ..., "event": ..., "covariates": [...], "exclude": [...]}``);
    by default every column other than time and event is a covariate.
    """
    schema = dict(schema or {})
    time_col = schema.get("time", "time")
    event_col = schema.get("event", "event")
    exclude = set(schema.get("exclude", ()))
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [row for row in rows if row and any(cell.strip() for cell in row)]
    if not rows:
        raise CohortError(f"{path}: no records")
    header = [h.strip() for h in rows[0]]
    for col in (time_col, event_col):
        if col not in header:
            raise CohortError(f"{path}: missing column {col!r}")
    cov_cols = schema.get("covariates")
    if cov_cols is None:
        cov_cols = [h for h in header if h not in (time_col, event_col) and h not in exclude]
    missing = [c for c in cov_cols if c not in header]
    if missing:
        raise CohortError(f"{path}: missing covariate columns {missing}")
    it, ie = header.index(time_col), header.index(event_col)
    ic = [header.index(c) for c in cov_cols]
    body = rows[1:]
    if not body:
        raise CohortError(f"{path}: no records")

    times, labels, covs = [], [], []
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise CohortError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            t = float(row[it])
        except ValueError:
            raise CohortError(f"{path}:{lineno}: non-numeric time {row[it]!r}") from None
        if not np.isfinite(t) or t < 0:
            raise CohortError(f"{path}:{lineno}: invalid time {row[it]!r}")
        try:
            r = float(row[ie])
        except ValueError:
            raise CohortError(f"{path}:{lineno}: non-numeric event label {row[ie]!r}") from None
        if r != int(r) or r < 0 or (n_risks is not None and r > n_risks):
            raise CohortError(f"{path}:{lineno}: event label {row[ie]!r} out of range")
        z = []
        for j in ic:
            try:
                z.append(float(row[j]))
            except ValueError:
                raise CohortError(
                    f"{path}:{lineno}: non-numeric covariate {header[j]!r}={row[j]!r}"
                ) from None
        times.append(t)
        labels.append(int(r))
        covs.append(z)
    covs = np.asarray(covs, dtype=float).reshape(len(body), len(ic))
    return Cohort(covs, np.asarray(times), np.asarray(labels), n_risks=n_risks,
                  covariate_names=tuple(cov_cols))


def normalize_covariates(cohort: Cohort) -> Cohort:
    """Rescale every covariate column to zero mean and unit population variance.

    Raises CohortError naming the first constant column.
    """
    z = cohort.covariates
    if cohort.n_individuals == 0:
        raise CohortError("cannot normalize an empty cohort")
    means = z.mean(axis=0)
    sds = z.std(axis=0)
    for j, s in enumerate(sds):
        if not s > 1e-12 * max(1.0, abs(means[j])):
            raise CohortError(f"covariate {cohort.covariate_names[j]!r} is constant")
    norm = Normalization(means, sds)
    if cohort.normalization is not None:
        prev = cohort.normalization
        # compose with the earlier map so raw-scale reporting still works
        norm = Normalization(prev.means + prev.sds * means, prev.sds * sds)
    return Cohort(
        (z - means) / sds,
        cohort.event_times,
        cohort.event_labels,
        n_risks=cohort.n_risks,
        normalization=norm,
        covariate_names=cohort.covariate_names,
    )


def apply_normalization(cohort: Cohort, normalization: Normalization | None) -> Cohort:
    """Map a raw-scale cohort onto the covariate scale of a fitted model."""
    if normalization is None:
        return cohort
    if cohort.normalization is not None:
        raise CohortError("cohort is already normalized")
    if normalization.means.size != cohort.n_covariates:
        raise CohortError(
            f"normalization has {normalization.means.size} covariates, cohort has {cohort.n_covariates}"
        )
    return Cohort(normalization.apply(cohort.covariates), cohort.event_times, cohort.event_labels,
                  n_risks=cohort.n_risks, normalization=normalization,
                  covariate_names=cohort.covariate_names)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Generating law of a latent-class cohort with constant base rates.

    ``betas[l, r-1]`` is the vector ``(frailty, beta^1, ..., beta^p)`` of class
    ``l`` for risk ``r``.  ``censor_time=None`` disables end-of-trial censoring.
    """

    class_weights: Sequence[float]
    betas: np.ndarray
    base_rates: Sequence[float]
    n_individuals: int
    censor_time: float | None = None
    rng_seed: int = 0

    def __post_init__(self):
        w = np.asarray(self.class_weights, dtype=float)
        b = np.asarray(self.betas, dtype=float)
        lam = np.asarray(self.base_rates, dtype=float)
        if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("class_weights must be a probability vector")
        if b.ndim != 3 or b.shape[0] != w.size or b.shape[1] != lam.size:
            raise ValueError(f"betas must have shape (L, R, p+1); got {b.shape}")
        if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
            raise ValueError("base rates must be positive")
        if self.n_individuals < 1:
            raise ValueError("n_individuals must be positive")
        if self.censor_time is not None and not self.censor_time > 0:
            raise ValueError("censor_time must be positive")
        object.__setattr__(self, "class_weights", w)
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "base_rates", lam)

    @property
    def n_classes(self):
        return self.betas.shape[0]

    @property
    def n_risks(self):
        return self.betas.shape[1]

    @property
    def n_covariates(self):
        return self.betas.shape[2] - 1


def generate_synthetic(spec: SyntheticSpec) -> tuple[Cohort, np.ndarray]:
    """Draw a cohort from ``spec``; returns the cohort and true class labels (0-based).

    Latent times are ``t_ir = -tau_ir log u_ir`` with
    ``tau_ir = exp(-beta_r^l . z_i) / lambda_r``; the observation is the
    earliest latent time, or ``(censor_time, 0)`` if that comes first.
    """
    rng = np.random.default_rng(spec.rng_seed)
    n, p = spec.n_individuals, spec.n_covariates
    classes = rng.choice(spec.n_classes, size=n, p=spec.class_weights)
    z = rng.standard_normal((n, p))
    u = 1.0 - rng.random((n, spec.n_risks))  # in (0, 1]
    za = np.column_stack([np.ones(n), z])
    eta = np.einsum("ip,irp->ir", za, spec.betas[classes])
    tau = np.exp(-eta) / spec.base_rates
    latent = -tau * np.log(u)
    first = np.argmin(latent, axis=1)
    t = latent[np.arange(n), first]
    r = first + 1
    if spec.censor_time is not None:
        cens = t > spec.censor_time
        t = np.where(cens, spec.censor_time, t)
        r = np.where(cens, 0, r)
    cohort = Cohort(z, t, r, n_risks=spec.n_risks)
    return cohort, classes


def table1_spec(name: str, n_individuals: int = 1600, rng_seed: int = 0) -> SyntheticSpec:
    """Data sets A, B and C: two equal classes, three covariates, censoring at t=50.

    All three share the primary risk (rate 0.05, coefficient +-2 on covariate 1);
    B adds a secondary risk aimed at the primary-sensitive class, C one aimed at
    the primary-insensitive class.
    """
    name = name.upper()
    primary = [[0.0, 2.0, 0.0, 0.0], [0.0, -2.0, 0.0, 0.0]]
    if name == "A":
        betas = [[primary[0]], [primary[1]]]
        rates = [0.05]
    elif name in ("B", "C"):
        s = 3.0 if name == "B" else -3.0
        betas = [[primary[0], [0.0, s, 0.0, 0.0]], [primary[1], [0.0, 0.0, 0.0, 0.0]]]
        rates = [0.05, 0.1]
    else:
        raise ValueError(f"unknown data set {name!r}; expected A, B or C")
    return SyntheticSpec([0.5, 0.5], np.array(betas), rates, n_individuals, 50.0, rng_seed)


def three_class_spec(rho: float, n_individuals: int = 9600, rng_seed: int = 0) -> SyntheticSpec:
    """Three equal classes whose primary-risk coefficients separate with ``rho``.

    Secondary and tertiary risks are covariate independent; base rates are
    1/10, 1/20, 1/30 and there is no end-of-trial censoring.
    """
    centre = np.array([0.5, 0.5, 0.5])
    dirs = np.array([[1.0, 0.0, 1.0], [-1.0, -1.0, 0.0], [0.0, 1.0, -1.0]])
    betas = np.zeros((3, 3, 4))
    betas[:, 0, 1:] = centre + rho * dirs
    return SyntheticSpec(np.full(3, 1.0 / 3.0), betas, [1 / 10, 1 / 20, 1 / 30],
                         n_individuals, None, rng_seed)


def ulsam_like_spec(n_individuals: int = 2047, rng_seed: int = 0) -> SyntheticSpec:
    """Two-class, five-covariate cohort mimicking a frail/healthy split.

    The healthy class carries frailty offsets of about -4.6 (primary) and -4.1
    (secondary) relative to the frail class; end-of-trial censoring removes
    roughly 45% of the cohort.
    """
    healthy = [
        [-4.61, 1.22, -0.41, 0.73, -0.01, 1.43],
        [-4.06, 0.82, -0.42, -0.31, -0.14, 1.35],
    ]
    frail = [
        [0.0, -0.07, -0.16, 0.19, -0.10, -0.27],
        [0.0, 0.10, -0.07, -0.07, 0.04, 0.18],
    ]
    return SyntheticSpec([0.5, 0.5], np.array([healthy, frail]), [0.02, 0.09],
                         n_individuals, 30.0, rng_seed)


def spec_model(spec: SyntheticSpec, cohort: Cohort | None = None, K: int = 1):
    """The generating law of ``spec`` as a LatentClassModel on the raw covariate scale.

    Time bounds come from ``cohort`` when given.  End-of-trial censoring is not
    a hazard in the generator; it is represented by a constant censoring rate
    equal to the cohort's censoring events per unit exposure (floored at 1e-3).
    Class 0 is moved to zero frailty through the exact rate/frailty redundancy.
    """
    from .hazard import constant_hazard, infer_time_bounds
    from .models import LatentClassModel

    if cohort is not None:
        t_min, t_max = infer_time_bounds(cohort)
        c0 = max(np.sum(cohort.event_labels == 0) / np.sum(cohort.event_times), 1e-3)
    else:
        t_min, t_max = 0.0, float(spec.censor_time or 1.0)
        c0 = 1e-3
    L, R, q = spec.betas.shape
    coef = np.zeros((L, R + 1, q))
    coef[:, 1:] = spec.betas
    rates = [c0, *spec.base_rates]
    hz = tuple(constant_hazard(lam, t_min, t_max, K) for lam in rates)
    return LatentClassModel(spec.class_weights, coef, hz).with_reference_class()
