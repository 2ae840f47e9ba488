import math

import numpy as np
import pytest

from tlasso_var.errors import DimensionError, ParameterError, SingularDesignError
from tlasso_var.gaussian import (
    SolverConfig,
    b_step,
    bic,
    gamma_grid,
    gaussian_lasso,
    lambda_grid,
    lambda_max,
    ls_estimate,
    omega_step,
    penalized_objective,
    select_gamma,
    select_lambda,
    weighted_arrays,
)
from tlasso_var.models import RegularizationParams
from tlasso_var.var import build_panel, dgp_model, simulate_var

FAST = SolverConfig(outer_max_iter=30, em_max_iter=30)


@pytest.fixture(scope="module")
def panel():
    series = simulate_var(dgp_model(4, 1), 200, burn_in=50, seed=11)
    return build_panel(series, order=1)


def test_bic_matches_definition():
    assert bic(-10.0, 3, math.exp(2)) == pytest.approx(26.0)
    assert bic(-10.0, 0, 1) == pytest.approx(20.0)
    assert bic(-10.0, 3, 7) == pytest.approx(20.0 + 3 * math.log(7))


def test_bic_rejects_empty_sample():
    with pytest.raises(ParameterError):
        bic(0.0, 1, 0)


def test_b_step_zero_at_lambda_max(panel):
    omega = np.eye(panel.dimension)
    upper = lambda_max(panel, omega)
    coefficients = b_step(panel, omega, upper * 1.0001)
    assert np.count_nonzero(coefficients) == 0
    assert np.count_nonzero(b_step(panel, omega, upper * 0.5)) > 0


def test_b_step_without_penalty_matches_least_squares(panel):
    omega = np.eye(panel.dimension)
    coefficients = b_step(panel, omega, 0.0, config=SolverConfig(b_tol=1e-13))
    expected, *_ = np.linalg.lstsq(panel.design, panel.response, rcond=None)
    np.testing.assert_allclose(coefficients, expected, atol=1e-8)


def test_b_step_without_penalty_ignores_omega(panel):
    omega = np.array([[2.0, 0.5, 0.0, 0.0], [0.5, 1.0, 0.2, 0.0], [0.0, 0.2, 1.5, 0.3], [0.0, 0.0, 0.3, 1.0]])
    coefficients = b_step(panel, omega, 0.0, config=SolverConfig(b_tol=1e-13))
    np.testing.assert_allclose(coefficients, ls_estimate(panel).coefficients, atol=1e-8)


def test_b_step_sparsity_is_monotone_in_lambda():
    series = np.random.default_rng(12).normal(size=(300, 4))
    noise = build_panel(series, order=2)
    omega = np.eye(4)
    grid = lambda_grid(lambda_max(noise, omega), 8, 1e-2)
    counts = [np.count_nonzero(b_step(noise, omega, value)) for value in grid]
    assert counts[0] == 0
    assert all(later >= earlier for earlier, later in zip(counts, counts[1:]))
    assert counts[-1] > 0


def test_b_step_penalty_decreases_objective_against_zero(panel):
    omega = np.eye(panel.dimension)
    lam = 0.1 * lambda_max(panel, omega)
    coefficients = b_step(panel, omega, lam)
    zero = np.zeros_like(coefficients)
    assert penalized_objective(panel, coefficients, omega, lam, 0.0) < penalized_objective(
        panel, zero, omega, lam, 0.0
    )


def test_b_step_validates_inputs(panel):
    with pytest.raises(ParameterError):
        b_step(panel, np.eye(panel.dimension), -1.0)
    with pytest.raises(DimensionError):
        b_step(panel, np.eye(panel.dimension + 1), 0.1)


def test_weighted_arrays_scale_rows(panel):
    weights = np.full(panel.n_obs, 4.0)
    response, design = weighted_arrays(panel, weights)
    np.testing.assert_allclose(response, 2.0 * panel.response)
    np.testing.assert_allclose(design, 2.0 * panel.design)
    with pytest.raises(ParameterError):
        weighted_arrays(panel, np.zeros(panel.n_obs))
    with pytest.raises(DimensionError):
        weighted_arrays(panel, np.ones(panel.n_obs + 1))


def test_omega_step_without_penalty_is_inverse_covariance():
    residuals = np.random.default_rng(2).normal(size=(300, 3))
    precision = omega_step(residuals, 0.0)
    covariance = residuals.T @ residuals / 300
    np.testing.assert_allclose(precision, np.linalg.inv(covariance), rtol=1e-8)


def test_omega_step_large_penalty_is_diagonal():
    residuals = np.random.default_rng(3).normal(size=(200, 3))
    residuals[:, 1] += 0.5 * residuals[:, 0]
    precision = omega_step(residuals, 10.0)
    off = precision - np.diag(np.diag(precision))
    assert np.allclose(off, 0.0)
    np.testing.assert_allclose(precision, precision.T)


def test_omega_step_univariate_and_zero_residuals():
    residuals = np.full((10, 1), 2.0)
    assert omega_step(residuals, 0.3)[0, 0] == pytest.approx(0.25)
    floored = omega_step(np.zeros((10, 2)), 0.0)
    np.testing.assert_allclose(floored, 1e10 * np.eye(2))


def test_omega_step_singular_covariance_without_penalty():
    column = np.random.default_rng(4).normal(size=(50, 1))
    residuals = np.hstack([column, column])
    with pytest.raises(SingularDesignError):
        omega_step(residuals, 0.0)


def test_grids_are_descending_and_span_ratio():
    grid = lambda_grid(2.0, 20, 1e-3)
    assert len(grid) == 20
    assert grid[0] == pytest.approx(2.0)
    assert grid[-1] == pytest.approx(2e-3)
    assert all(a > b for a, b in zip(grid, grid[1:]))
    assert lambda_grid(0.5, 1) == (0.5,)


def test_gamma_grid_falls_back_to_zero_without_off_diagonal_mass():
    assert gamma_grid(np.zeros((10, 3))) == (0.0,)
    assert gamma_grid(np.ones((10, 1))) == (0.0,)
    residuals = np.random.default_rng(5).normal(size=(100, 3))
    grid = gamma_grid(residuals, 10, 1e-2)
    assert len(grid) == 10
    assert grid[-1] == pytest.approx(grid[0] * 1e-2)


def test_select_lambda_prefers_largest_penalty_on_ties(panel):
    omega = np.eye(panel.dimension)
    upper = lambda_max(panel, omega)
    # every point above lambda_max gives B = 0 and the same BIC
    selection = select_lambda(panel, omega, (upper * 4, upper * 3, upper * 2))
    assert selection.chosen == pytest.approx(upper * 4)
    assert [step.df for step in selection.path] == [0, 0, 0]


def test_select_lambda_path_records_bic(panel):
    omega = np.eye(panel.dimension)
    grid = lambda_grid(lambda_max(panel, omega), 8, 1e-3)
    selection = select_lambda(panel, omega, grid)
    best = min(selection.path, key=lambda step: step.bic)
    assert selection.chosen == best.value
    assert selection.path[0].df == 0
    assert selection.path[-1].df > 0


def test_select_gamma_scores_every_grid_point():
    residuals = np.random.default_rng(6).normal(size=(150, 3))
    grid = gamma_grid(residuals)
    selection = select_gamma(residuals, grid)
    assert len(selection.path) == len(grid)
    assert selection.chosen in grid
    with pytest.raises(ParameterError):
        select_gamma(residuals, ())


def test_gaussian_lasso_recovers_sparse_structure(panel):
    fit = gaussian_lasso(panel, config=FAST)
    truth = dgp_model(4, 1).stacked()

    assert fit.coefficients.shape == (4, 4)
    assert np.mean(np.abs(fit.coefficients - truth)) < 0.15
    assert fit.chosen[0] > 0
    assert np.all(np.linalg.eigvalsh(fit.precision) > 0)
    assert fit.objective in fit.history


def test_gaussian_lasso_fixed_penalties_decrease_objective(panel):
    params = RegularizationParams.fixed(lambda_=0.05, gamma=0.01)
    fit = gaussian_lasso(panel, params, config=SolverConfig(outer_eps=1e-10, outer_max_iter=50))
    assert fit.chosen == (0.05, 0.01)
    for earlier, later in zip(fit.history, fit.history[1:]):
        assert later <= earlier + 1e-5 * max(1.0, abs(earlier))


def test_gaussian_lasso_reports_unconverged_best_iterate(panel):
    fit = gaussian_lasso(panel, config=SolverConfig(outer_max_iter=1))
    assert fit.iterations == 1
    assert not fit.converged
    assert fit.objective == pytest.approx(min(fit.history))


def test_gaussian_lasso_constant_panel_gives_zero_coefficients():
    panel = build_panel(np.full((30, 2), 3.0), order=1)
    fit = gaussian_lasso(panel, config=FAST)
    assert np.count_nonzero(fit.coefficients) == 0
    assert np.all(np.isfinite(fit.precision))


def test_ls_estimate_matches_lstsq(panel):
    fit = ls_estimate(panel)
    expected, *_ = np.linalg.lstsq(panel.design, panel.response, rcond=None)
    np.testing.assert_allclose(fit.coefficients, expected, atol=1e-10)
    residuals = panel.response - panel.design @ expected
    np.testing.assert_allclose(fit.covariance(), residuals.T @ residuals / panel.n_obs, atol=1e-10)
    model = fit.to_model(panel.means)
    assert model.order == 1 and model.error.kind == "gaussian"


def test_ls_estimate_requires_enough_observations():
    series = np.random.default_rng(8).normal(size=(6, 3))
    with pytest.raises(SingularDesignError):
        ls_estimate(build_panel(series, order=2))


def test_omega_step_recovers_banded_zero_pattern():
    dimension = 10
    offsets = np.abs(np.subtract.outer(np.arange(dimension), np.arange(dimension)))
    covariance = 0.1**offsets
    residuals = np.random.default_rng(9).multivariate_normal(np.zeros(dimension), covariance, size=1000)

    precision = omega_step(residuals, 0.04)

    # the inverse of a 0.1^|i-j| covariance is tridiagonal
    off_band = offsets >= 2
    assert np.mean(precision[off_band] == 0.0) >= 0.8
    assert np.count_nonzero(precision[offsets == 1]) >= 3
    assert np.all(np.linalg.eigvalsh(precision) > 0)


def test_gaussian_lasso_without_penalties_matches_least_squares(panel):
    fit = gaussian_lasso(panel, RegularizationParams.fixed(lambda_=0.0, gamma=0.0), config=FAST)
    expected = ls_estimate(panel)
    np.testing.assert_allclose(fit.coefficients, expected.coefficients, atol=1e-6)
    np.testing.assert_allclose(fit.precision, expected.precision, rtol=1e-6)
    assert fit.converged


@pytest.mark.parametrize("scale", [1.0, 0.1])
def test_gaussian_lasso_zeroes_pure_noise_at_lambda_max(scale):
    series = scale * np.random.default_rng(14).normal(size=(200, 4))
    noise = build_panel(series, order=1)

    fit = gaussian_lasso(noise, RegularizationParams(n_lambda=1), config=FAST)

    assert np.count_nonzero(fit.coefficients) == 0
    assert fit.chosen[0] == pytest.approx(lambda_max(noise, fit.precision), rel=1e-6)


def test_gaussian_lasso_does_not_depend_on_units():
    series = simulate_var(dgp_model(4, 1), 200, burn_in=50, seed=11)
    config = SolverConfig(outer_eps=0.0, outer_max_iter=12)

    unit = gaussian_lasso(build_panel(series, order=1), config=config)
    scaled = gaussian_lasso(build_panel(0.1 * series, order=1), config=config)

    assert scaled.chosen[0] == pytest.approx(unit.chosen[0], rel=1e-6)
    assert scaled.chosen[1] == pytest.approx(0.01 * unit.chosen[1], rel=1e-6)
    np.testing.assert_allclose(scaled.coefficients, unit.coefficients, atol=1e-6)
    np.testing.assert_allclose(0.01 * scaled.precision, unit.precision, rtol=1e-5, atol=1e-8)
    assert np.count_nonzero(unit.coefficients) > 0
