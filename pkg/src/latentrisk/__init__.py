"""Heterogeneity-induced competing risks: latent-class and Gaussian-frailty survival models."""

__version__ = "0.1.0"

from .cohort import (  # noqa: E402
    Cohort,
    CohortError,
    SyntheticSpec,
    generate_synthetic,
    load_cohort,
    normalize_covariates,
)
from .hazard import BaseHazard, infer_time_bounds  # noqa: E402
from .models import GaussianFrailtyModel, LatentClassModel, n_params  # noqa: E402
from .likelihood import (  # noqa: E402
    PenaltyConfig,
    loglik_gaussian_lb,
    loglik_gaussian_mc,
    loglik_latent,
    psi_objective,
)
from .estimation import FitConfig, error_bars, fit_map, init_model, select_model  # noqa: E402
from .inference import (  # noqa: E402
    class_posterior,
    classification_fraction,
    crude_hazard,
    crude_survival,
    cumulative_incidence,
    decontaminated_hazard,
    decontaminated_survival,
    effective_classes,
    quantile_band_curve,
)
from .baselines import cox_fit, gamma_frailty_loglik, kaplan_meier  # noqa: E402
