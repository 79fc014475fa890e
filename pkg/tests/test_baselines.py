from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate, stats

from latentrisk.baselines import (
    BaselineError,
    StepFunction,
    cox_fit,
    cox_form_loglik,
    cox_partial_loglik,
    gamma_frailty_fit,
    gamma_frailty_loglik,
    gamma_hazard,
    gamma_laplace,
    gamma_survival,
    kaplan_meier,
)
from latentrisk.cohort import Cohort, SyntheticSpec, generate_synthetic, table1_spec
from latentrisk.hazard import BaseHazard, constant_hazard
from oracles import product_limit

sm = pytest.importorskip("statsmodels.api")
from statsmodels.duration.hazard_regression import PHReg  # noqa: E402
from statsmodels.duration.survfunc import SurvfuncRight  # noqa: E402


def cohort(t, r, z=None):
    t = np.asarray(t, float)
    z = np.zeros((t.size, 1)) if z is None else np.asarray(z, float)
    return Cohort(z, t, r)


# ---------------------------------------------------------------------------
# Kaplan-Meier


def test_km_all_events():
    km = kaplan_meier(cohort([1, 2, 3], [1, 1, 1]))
    np.testing.assert_allclose(km([0.5, 1, 2, 3, 9]), [1, 2 / 3, 1 / 3, 0, 0])


def test_km_all_censored_warns():
    with pytest.warns(UserWarning):
        km = kaplan_meier(cohort([1, 2], [0, 0]))
    np.testing.assert_array_equal(km([0, 5]), [1, 1])


def test_km_hand_table():
    # t: 1(event) 2(censored) 2(event) 4(other risk = censored for r=1)
    # at 1: 4 at risk, 1 death -> 3/4; at 2: 3 at risk (censoring after events) -> 3/4 * 2/3
    km = kaplan_meier(cohort([1, 2, 2, 4], [1, 0, 1, 2]))
    np.testing.assert_allclose(km([1, 2, 3, 4]), [0.75, 0.5, 0.5, 0.5], rtol=1e-15)


def test_km_no_censoring_is_empirical():
    rng = np.random.default_rng(0)
    t = rng.exponential(size=200)
    km = kaplan_meier(cohort(t, np.ones(200, int)))
    grid = np.linspace(0, 3, 50)
    np.testing.assert_allclose(km(grid), [(t > g).mean() for g in grid], atol=1e-12)


def test_km_against_oracles():
    rng = np.random.default_rng(1)
    t = np.round(rng.exponential(2, 300), 1) + 0.1  # ties
    r = rng.integers(0, 3, 300)
    km = kaplan_meier(cohort(t, r), 1)
    ut, us = product_limit(t, r == 1)
    np.testing.assert_allclose(km(ut), us, rtol=1e-12)
    sf = SurvfuncRight(t, (r == 1).astype(float))
    np.testing.assert_allclose(km(sf.surv_times), sf.surv_prob, rtol=1e-10)


def test_step_function():
    f = StepFunction(np.array([1.0, 2.0]), np.array([0.5, 0.2]))
    np.testing.assert_allclose(f([0.0, 1.0, 1.5, 2.0, 10.0]), [1, 0.5, 0.5, 0.2, 0.2])


# ---------------------------------------------------------------------------
# Cox


def test_cox_matches_statsmodels():
    spec = SyntheticSpec([1.0], np.array([[[0.0, 0.7, -0.4], [0.0, 0.2, 0.0]]]), [0.1, 0.05], 800, 10.0, 2)
    c, _ = generate_synthetic(spec)
    t = np.round(c.event_times, 1) + 0.05  # force ties
    c = Cohort(c.covariates, t, c.event_labels)
    fit = cox_fit(c, 1)
    ref = PHReg(t, c.covariates, status=(c.event_labels == 1).astype(float), ties="breslow").fit()
    np.testing.assert_allclose(fit.coefficients, ref.params, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(fit.standard_errors, ref.bse, rtol=1e-5)
    assert fit.partial_loglik == pytest.approx(ref.llf, rel=1e-8)
    assert fit.converged and not fit.separation


def test_cox_gradient_hessian_consistent():
    rng = np.random.default_rng(3)
    c = Cohort(rng.normal(size=(60, 2)), rng.exponential(size=60), rng.integers(0, 2, 60))
    b = np.array([0.3, -0.2])
    ll, g, H = cox_partial_loglik(b, c)
    h = 1e-5
    for k in range(2):
        e = np.eye(2)[k] * h
        assert (cox_partial_loglik(b + e, c)[0] - cox_partial_loglik(b - e, c)[0]) / (2 * h) == pytest.approx(g[k], rel=1e-6)
        gd = (cox_partial_loglik(b + e, c)[1] - cox_partial_loglik(b - e, c)[1]) / (2 * h)
        np.testing.assert_allclose(gd, H[k], rtol=1e-5)


def test_cox_shift_invariance():
    rng = np.random.default_rng(4)
    c = Cohort(rng.normal(size=(200, 2)), rng.exponential(size=200), rng.integers(0, 2, 200))
    shifted = Cohort(c.covariates + [5.0, -3.0], c.event_times, c.event_labels)
    np.testing.assert_allclose(cox_fit(shifted).coefficients, cox_fit(c).coefficients, atol=1e-6)


def test_cox_breslow_baseline():
    c = cohort([1, 2, 2, 3], [1, 1, 0, 1])
    with pytest.warns(UserWarning):  # a constant covariate carries no information
        fit = cox_fit(c)
    np.testing.assert_allclose(fit.baseline_times, [1, 2, 3])
    np.testing.assert_allclose(fit.baseline_increments, [1 / 4, 1 / 3, 1 / 1])
    assert np.all(fit.baseline_increments >= 0)
    assert fit.cumulative_baseline(2.5) == pytest.approx(1 / 4 + 1 / 3)


def test_cox_errors_and_separation():
    with pytest.raises(BaselineError):
        cox_fit(cohort([1, 2], [0, 0]))
    z = np.column_stack([np.arange(4.0), np.arange(4.0)])
    with pytest.raises(BaselineError, match="identical"):
        cox_fit(cohort([1, 2, 3, 4], [1, 1, 1, 1], z))
    # the earliest times carry the largest covariate: monotone likelihood
    z = np.array([[3.0], [2.0], [1.0], [0.0]])
    with pytest.warns(UserWarning, match="separation"):
        fit = cox_fit(cohort([1, 2, 3, 4], [1, 1, 1, 0], z))
    assert fit.separation


def test_cox_table1_A_near_zero():
    c, _ = generate_synthetic(table1_spec("A"))
    assert np.all(np.abs(cox_fit(c).coefficients) <= 0.1)


def test_cox_table1_C_false_exposure():
    # one draw has a between-seed spread of about 0.07 on beta_1, so judge the ensemble
    b1 = np.array([
        cox_fit(generate_synthetic(replace(table1_spec("C"), rng_seed=s))[0]).coefficients[0]
        for s in range(10)
    ])
    assert abs(b1.mean() - (-0.34)) <= 0.1
    assert np.mean(np.abs(b1 + 0.34) <= 0.1) >= 0.7
    assert np.all(b1 < 0)


def test_cox_homogeneous_within_two_se():
    spec = SyntheticSpec([1.0], np.array([[[0.0, 1.0, 0.0, 0.0]]]), [0.05], 1600, 50.0, 5)
    c, _ = generate_synthetic(spec)
    fit = cox_fit(c)
    assert np.all(np.abs(fit.coefficients - [1, 0, 0]) <= 2 * fit.standard_errors)


# ---------------------------------------------------------------------------
# gamma frailty


def test_gamma_laplace_identity_by_quadrature():
    alpha, y = 2.0, 3.0
    # E[exp(-u y)] with u ~ Gamma(alpha, scale 1/alpha)
    f = lambda u: stats.gamma.pdf(u, alpha, scale=1 / alpha) * np.exp(-y * u)  # noqa: E731
    val, _ = integrate.quad(f, 0, np.inf, epsabs=1e-14, epsrel=1e-12)
    assert gamma_laplace(alpha, y) == pytest.approx(0.16, abs=1e-12)
    assert abs(gamma_laplace(alpha, y) - val) <= 1e-8


def test_gamma_cox_limit():
    rng = np.random.default_rng(6)
    c = Cohort(rng.normal(size=(100, 2)), rng.exponential(5, 100), rng.integers(0, 2, 100))
    base = BaseHazard(0, 15, [0.1, 0.2])
    b = [0.3, -0.5]
    assert gamma_frailty_loglik(1e6, b, base, c) == pytest.approx(cox_form_loglik(b, base, c), abs=1e-4)


def test_gamma_survival_vs_monte_carlo():
    rng = np.random.default_rng(7)
    alpha, b = 1.5, np.array([0.4, -0.2])
    base = constant_hazard(0.1, 0, 20)
    u = rng.gamma(alpha, 1 / alpha, 1_000_000)
    for z, t in (([0.5, 1.0], 3.0), ([-1.0, 0.3], 12.0), ([2.0, 0.0], 7.0)):
        y = base.cumulative(t) * np.exp(np.dot(z, b))
        draws = np.exp(-u * y)
        se = draws.std() / np.sqrt(draws.size)
        assert abs(gamma_survival(alpha, b, base, z, t) - draws.mean()) <= 3 * se


def test_gamma_hazard_filtered_and_log_derivative():
    alpha, b = 0.8, np.array([0.6])
    base = BaseHazard(0, 10, [0.05, 0.3, 0.1])
    t = np.linspace(0.1, 10, 25)
    for z in ([-1.0], [0.0], [1.5]):
        free = base.eval_rate(t) * np.exp(np.dot(z, b))
        h = gamma_hazard(alpha, b, base, z, t)
        assert np.all(h <= free)
        eps = 1e-5
        fd = -(np.log(gamma_survival(alpha, b, base, z, t + eps)) - np.log(gamma_survival(alpha, b, base, z, t - eps))) / (2 * eps)
        np.testing.assert_allclose(h, fd, rtol=1e-5)


def test_gamma_alpha_validated():
    with pytest.raises(BaselineError):
        gamma_laplace(0.0, 1.0)


def test_gamma_fit_recovers_shape_direction():
    rng = np.random.default_rng(8)
    n, alpha = 3000, 1.0
    z = rng.normal(size=(n, 1))
    u = rng.gamma(alpha, 1 / alpha, n)
    t = rng.exponential(1 / (0.1 * u * np.exp(0.7 * z[:, 0])))
    c = Cohort(z, np.minimum(t, 30), np.where(t < 30, 1, 0))
    fit = gamma_frailty_fit(c, K=1, rounds=3)
    assert 0.6 < fit.alpha < 1.6
    assert abs(fit.coefficients[0] - 0.7) < 0.15
