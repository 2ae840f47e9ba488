import math

import numpy as np
import pytest
from scipy import stats

from tlasso_var.errors import ParameterError
from tlasso_var.gaussian import SolverConfig, gaussian_lasso
from tlasso_var.models import RegularizationParams
from tlasso_var.tlasso import (
    TDensityParams,
    e_step_weights,
    ecm_estimate,
    em_fixed_nu,
    nu_equation_lhs,
    penalized_t_objective,
    scaled_data,
    solve_nu,
    t_log_density,
    t_log_likelihood,
)
from tlasso_var.var import build_panel, dgp_model, simulate_var

FAST = SolverConfig(outer_max_iter=30, em_max_iter=40)
FIXED = RegularizationParams.fixed(lambda_=0.02, gamma=0.01)
TIGHT = SolverConfig(outer_eps=1e-12, em_eps=1e-12, omega_tol=1e-8, outer_max_iter=200, em_max_iter=100)


@pytest.fixture(scope="module")
def heavy_panel():
    series = simulate_var(dgp_model(3, 1, nu=3.0), 250, burn_in=50, seed=21)
    return build_panel(series, order=1)


def test_e_step_weight_example():
    # nu=3, J=2, e'Omega e = 5 -> (3 + 2) / (3 + 5)
    residuals = np.array([[math.sqrt(5.0), 0.0]])
    weights = e_step_weights(residuals, np.eye(2), 3.0)
    assert weights[0] == pytest.approx(0.625)


def test_e_step_weights_are_one_for_gaussian():
    residuals = np.random.default_rng(0).normal(size=(5, 2))
    np.testing.assert_array_equal(e_step_weights(residuals, np.eye(2), math.inf), np.ones(5))
    with pytest.raises(ParameterError):
        e_step_weights(residuals, np.eye(2), 0.0)


def test_e_step_downweights_outliers():
    residuals = np.array([[0.1, 0.1], [10.0, -10.0]])
    weights = e_step_weights(residuals, np.eye(2), 3.0)
    assert weights[0] > 1.0 > weights[1]


def test_t_log_density_matches_scipy():
    scale = np.array([[1.0, 0.3], [0.3, 2.0]])
    point = np.array([0.4, -1.2])
    params = TDensityParams(nu=4.0, omega=np.linalg.inv(scale))
    expected = stats.multivariate_t(loc=np.zeros(2), shape=scale, df=4.0).logpdf(point)
    assert t_log_density(point, params) == pytest.approx(expected, rel=1e-10)


def test_t_log_likelihood_gaussian_limit():
    residuals = np.random.default_rng(1).normal(size=(20, 2))
    gaussian = stats.multivariate_normal(mean=np.zeros(2)).logpdf(residuals).sum()
    assert t_log_likelihood(residuals, math.inf, np.eye(2)) == pytest.approx(gaussian, rel=1e-10)
    assert t_log_likelihood(residuals, 1e8, np.eye(2)) == pytest.approx(gaussian, rel=1e-6)


def test_density_params_validate():
    with pytest.raises(ParameterError):
        TDensityParams(nu=-1.0, omega=np.eye(2))
    with pytest.raises(ParameterError):
        TDensityParams(nu=3.0, omega=-np.eye(2))


def test_scaled_data_uses_square_root_weights(heavy_panel):
    weights = np.full(heavy_panel.n_obs, 0.25)
    response, design = scaled_data(heavy_panel, weights)
    np.testing.assert_allclose(response, 0.5 * heavy_panel.response)
    np.testing.assert_allclose(design, 0.5 * heavy_panel.design)


def test_nu_equation_is_decreasing_and_positive_for_unit_weights():
    weights = np.ones(50)
    grid = np.geomspace(0.1, 500.0, 30)
    values = nu_equation_lhs(grid, weights, 3)
    assert np.all(np.diff(values) < 0)
    assert np.all(values > 0)
    assert isinstance(nu_equation_lhs(2.0, weights, 3), float)


def test_nu_equation_correction_modes_differ():
    weights = np.linspace(0.2, 2.0, 40)
    averaged = nu_equation_lhs(5.0, weights, 2, "averaged")
    per_observation = nu_equation_lhs(5.0, weights, 2, "per_observation")
    assert averaged != pytest.approx(per_observation)
    with pytest.raises(ParameterError):
        nu_equation_lhs(5.0, weights, 2, "other")


def test_solve_nu_without_sign_change_returns_upper_bound():
    nu, on_bound = solve_nu(np.ones(40), 3)
    assert nu == 1000.0
    assert on_bound


def test_solve_nu_degenerate_bounds():
    assert solve_nu(np.ones(10), 2, bounds=(4.0, 4.0)) == (4.0, True)
    with pytest.raises(ParameterError):
        solve_nu(np.ones(10), 2, bounds=(0.0, 1.0))


def test_solve_nu_recovers_dof_from_true_weights():
    rng = np.random.default_rng(5)
    nu_true, dimension = 4.0, 3
    tau = rng.gamma(shape=nu_true / 2, scale=2 / nu_true, size=20000)
    phi = rng.standard_normal((20000, dimension))
    residuals = phi / np.sqrt(tau)[:, None]
    weights = e_step_weights(residuals, np.eye(dimension), nu_true)

    nu_hat, on_bound = solve_nu(weights, dimension, correction="per_observation")

    assert not on_bound
    assert nu_equation_lhs(nu_hat, weights, dimension, "per_observation") == pytest.approx(0.0, abs=1e-8)
    assert 3.0 < nu_hat < 5.5


def test_em_fixed_nu_is_monotone_in_the_t_objective(heavy_panel):
    fit = em_fixed_nu(heavy_panel, 3.0, FIXED, config=FAST)

    objectives = [step.t_objective for step in fit.history]
    for earlier, later in zip(objectives, objectives[1:]):
        assert later <= earlier + 1e-5 * max(1.0, abs(earlier))
    assert fit.dof == 3.0
    assert fit.chosen == (0.02, 0.01)
    assert fit.weights.shape == (heavy_panel.n_obs,)


def test_em_fixed_nu_objective_matches_helper(heavy_panel):
    fit = em_fixed_nu(heavy_panel, 5.0, FIXED, config=FAST)
    expected = penalized_t_objective(heavy_panel, fit.coefficients, fit.precision, 5.0, *fit.chosen)
    assert any(step.t_objective == pytest.approx(expected) for step in fit.history)


def test_em_fixed_nu_rejects_non_positive_dof(heavy_panel):
    with pytest.raises(ParameterError):
        em_fixed_nu(heavy_panel, 0.0)


def test_em_returns_best_iterate_when_capped(heavy_panel):
    fit = em_fixed_nu(heavy_panel, 3.0, FIXED, config=SolverConfig(outer_max_iter=30, em_max_iter=2))
    assert not fit.converged
    assert fit.iterations == 2
    assert len(fit.history) == 2


def test_ecm_with_huge_nu_matches_gaussian_lasso(heavy_panel):
    t_fit = ecm_estimate(heavy_panel, FIXED, nu_bounds=(1e6, 1e6), nu_init=1e6, config=TIGHT)
    gaussian = gaussian_lasso(heavy_panel, FIXED, config=TIGHT)

    assert t_fit.dof == 1e6
    assert t_fit.dof_on_bound
    np.testing.assert_allclose(t_fit.coefficients, gaussian.coefficients, atol=1e-4)


def test_em_with_near_infinite_nu_matches_gaussian_lasso(heavy_panel):
    t_fit = em_fixed_nu(heavy_panel, 1e8, FIXED, config=TIGHT)
    gaussian = gaussian_lasso(heavy_panel, FIXED, config=TIGHT)

    np.testing.assert_allclose(t_fit.weights, 1.0, atol=1e-5)
    np.testing.assert_allclose(t_fit.coefficients, gaussian.coefficients, atol=1e-5)
    np.testing.assert_allclose(t_fit.precision, gaussian.precision, rtol=1e-4, atol=1e-6)


def test_ecm_estimates_heavy_tails(heavy_panel):
    fit = ecm_estimate(heavy_panel, FIXED, config=FAST)
    assert not fit.dof_on_bound
    assert 1.5 < fit.dof < 8.0
    assert fit.history[-1].dof == fit.dof or not fit.converged
    model = fit.to_model(heavy_panel.means)
    assert model.error.kind == "student_t"


@pytest.mark.parametrize("seed", range(3))
def test_ecm_dof_recovery_on_small_panels(seed):
    series = simulate_var(dgp_model(10, 2, nu=3.0), 100, seed=seed)
    fit = ecm_estimate(build_panel(series, order=2), config=FAST)
    assert not fit.dof_on_bound
    assert 1.5 < fit.dof < 8.0


def test_em_objective_is_monotone_across_random_panels():
    config = SolverConfig(outer_max_iter=30, em_max_iter=25, omega_tol=1e-8)
    for seed in range(50):
        nu = (1.0, 3.0, math.inf)[seed % 3]
        series = simulate_var(dgp_model(3, 1, nu=nu), 80, burn_in=50, seed=100 + seed)
        fit = em_fixed_nu(build_panel(series, order=1), nu, FIXED, config=config)
        objectives = [step.t_objective for step in fit.history]
        for earlier, later in zip(objectives, objectives[1:]):
            assert later <= earlier + 1e-6 * max(1.0, abs(earlier)), (seed, nu)


def test_ecm_rejects_invalid_bounds(heavy_panel):
    with pytest.raises(ParameterError):
        ecm_estimate(heavy_panel, nu_bounds=(5.0, 1.0))


@pytest.mark.slow
def test_ecm_beats_gaussian_lasso_under_cauchy_errors():
    truth = dgp_model(10, 2, nu=1.0)
    t_errors, g_errors = [], []
    for seed in range(10):
        series = simulate_var(truth, 100, seed=seed)
        panel = build_panel(series, order=2)
        t_fit = ecm_estimate(panel)
        g_fit = gaussian_lasso(panel)
        t_errors.append(np.mean(np.abs(t_fit.coefficients - truth.stacked())))
        g_errors.append(np.mean(np.abs(g_fit.coefficients - truth.stacked())))
    assert np.mean(t_errors) < np.mean(g_errors)


@pytest.mark.slow
def test_ecm_recovers_dof_of_the_simulation_design():
    truth = dgp_model(10, 2, nu=3.0)
    estimates, averaged = [], []
    for seed in range(100):
        panel = build_panel(simulate_var(truth, 100, seed=seed), order=2)
        estimates.append(ecm_estimate(panel).dof)
        if seed < 3:
            averaged.append(ecm_estimate(panel, nu_correction="averaged"))

    assert np.mean(estimates) == pytest.approx(3.0, rel=0.15)
    assert max(estimates) < 1000.0
    # the averaged correction leaves the nu equation without a root on this design
    assert all(fit.dof_on_bound and fit.dof == 1000.0 for fit in averaged)
