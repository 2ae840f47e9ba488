"""Penalized Gaussian estimation of a VAR: lasso B-step, graphical-lasso Omega-step.

The joint objective minimised over the stacked coefficients ``B`` and the
precision matrix ``Omega`` is::

    1/(2N) tr[(Y - XB) Omega (Y - XB)'] - 1/2 log|Omega|
        + lambda * sum |b| + gamma * sum_{i != j} |omega_ij|

Every public routine accepts optional observation ``weights``; rows of ``Y``
and ``X`` are then scaled by ``sqrt(weights)`` before fitting, which turns the
objective into its weighted form used by the t-Lasso M-step.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from sklearn.covariance import graphical_lasso
from sklearn.exceptions import ConvergenceWarning

from ._kernels import coordinate_descent
from .errors import DataError, DimensionError, NumericalError, ParameterError, SingularDesignError
from .models import RegularizationParams
from .var import ErrorDistribution, PanelMatrix, VarModel

logger = logging.getLogger(__name__)

_VARIANCE_FLOOR = 1e-10
_LAMBDA_MAX_FLOOR = 1e-12
_RELATIVE_FLOOR = 1e-8


@dataclass(slots=True)
class SolverConfig:
    """Tolerances and iteration caps shared by the Gaussian and t-Lasso solvers.

    Attributes:
        b_tol: Largest coordinate move tolerated in a converged B-step sweep
        b_max_sweeps: Cap on coordinate-descent sweeps per B-step
        omega_tol: Duality-gap tolerance of the graphical lasso
        omega_max_iter: Cap on graphical-lasso iterations
        outer_eps: Relative objective change that stops the B/Omega alternation
        outer_max_iter: Cap on B/Omega alternations
        em_eps: Relative objective change that stops EM and ECM
        em_max_iter: Cap on EM/ECM iterations
    """

    b_tol: float = 1e-10
    b_max_sweeps: int = 10_000
    omega_tol: float = 1e-6
    omega_max_iter: int = 500
    outer_eps: float = 1e-6
    outer_max_iter: int = 100
    em_eps: float = 1e-6
    em_max_iter: int = 200


DEFAULT_SOLVER = SolverConfig()


@dataclass(frozen=True, slots=True)
class SelectionStep:
    """One grid point of a BIC search."""

    value: float
    bic: float
    df: int


@dataclass(frozen=True, slots=True)
class LambdaSelection:
    chosen: float
    coefficients: np.ndarray
    path: tuple[SelectionStep, ...]


@dataclass(frozen=True, slots=True)
class GammaSelection:
    chosen: float
    precision: np.ndarray
    path: tuple[SelectionStep, ...]


@dataclass(frozen=True, slots=True)
class GaussianFit:
    """Result of :func:`gaussian_lasso` or :func:`ls_estimate`.

    Attributes:
        coefficients: Stacked ``J*P x J`` estimate of ``[B_1', ..., B_P']'``
        precision: Estimated Omega
        objective: Final penalized negative log-likelihood
        chosen: The (lambda, gamma) pair in effect at the final iterate
        iterations: Number of B/Omega alternations
        converged: False when the alternation hit its iteration cap
        history: Objective after every alternation
    """

    coefficients: np.ndarray
    precision: np.ndarray
    objective: float
    chosen: tuple[float, float]
    iterations: int
    converged: bool = True
    history: tuple[float, ...] = field(default=())

    def covariance(self) -> np.ndarray:
        return symmetric_inverse(self.precision)

    def to_model(self, means: np.ndarray | None = None) -> VarModel:
        return VarModel.from_stacked(
            self.coefficients, ErrorDistribution.gaussian(self.covariance()), means=means
        )


def symmetric_inverse(matrix: np.ndarray) -> np.ndarray:
    try:
        inverse = linalg.inv(matrix)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError("matrix is singular and cannot be inverted") from exc
    return 0.5 * (inverse + inverse.T)


def weighted_arrays(panel: PanelMatrix, weights: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(sqrt(w) * Y, sqrt(w) * X)``; the panel itself when ``weights`` is None."""

    if weights is None:
        return panel.response, panel.design
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if weights.shape != (panel.n_obs,):
        raise DimensionError(f"expected {panel.n_obs} weights, got {weights.shape[0]}")
    if np.any(~(weights > 0)) or not np.all(np.isfinite(weights)):
        raise ParameterError("observation weights must be positive and finite")
    root = np.sqrt(weights)[:, None]
    return panel.response * root, panel.design * root


def bic(loglik: float, df: int, n: int) -> float:
    """Bayesian information criterion ``-2 * loglik + df * log(n)``."""

    if n < 1:
        raise ParameterError(f"sample size must be at least 1, got {n}")
    return -2.0 * loglik + df * math.log(n)


def trace_term(residuals: np.ndarray, precision: np.ndarray) -> float:
    """Half the sum of squared Mahalanobis norms, 1/2 tr[E Omega E']."""

    return 0.5 * float(np.sum((residuals @ precision) * residuals))


def log_det(precision: np.ndarray) -> float:
    sign, value = np.linalg.slogdet(precision)
    if sign <= 0:
        return -math.inf
    return float(value)


def off_diagonal_l1(precision: np.ndarray) -> float:
    return float(np.abs(precision).sum() - np.abs(np.diag(precision)).sum())


def _objective(
    response: np.ndarray,
    design: np.ndarray,
    coefficients: np.ndarray,
    precision: np.ndarray,
    lambda_: float,
    gamma: float,
) -> float:
    n_obs = response.shape[0]
    residuals = response - design @ coefficients
    return (
        trace_term(residuals, precision) / n_obs
        - 0.5 * log_det(precision)
        + lambda_ * float(np.abs(coefficients).sum())
        + gamma * off_diagonal_l1(precision)
    )


def penalized_objective(
    panel: PanelMatrix,
    coefficients: np.ndarray,
    precision: np.ndarray,
    lambda_: float,
    gamma: float,
    weights: np.ndarray | None = None,
) -> float:
    """Evaluate the joint penalized negative log-likelihood (weighted when ``weights`` is given)."""

    response, design = weighted_arrays(panel, weights)
    return _objective(response, design, np.asarray(coefficients, dtype=float), precision, lambda_, gamma)


def _lambda_max(response: np.ndarray, design: np.ndarray, precision: np.ndarray) -> float:
    n_obs = response.shape[0]
    value = float(np.max(np.abs(design.T @ response @ precision))) / n_obs
    return max(value, _LAMBDA_MAX_FLOOR)


def lambda_max(panel: PanelMatrix, precision: np.ndarray, weights: np.ndarray | None = None) -> float:
    """Smallest lambda for which the B-step returns the zero matrix, max|X'Y Omega| / N."""

    response, design = weighted_arrays(panel, weights)
    return _lambda_max(response, design, precision)


def lambda_grid(upper: float, count: int = 20, ratio: float = 1e-3) -> tuple[float, ...]:
    """``count`` log-spaced penalties from ``upper`` down to ``upper * ratio``."""

    if count == 1:
        return (float(upper),)
    return tuple(float(v) for v in np.geomspace(upper, upper * ratio, count))


def gamma_grid(residuals: np.ndarray, count: int = 10, ratio: float = 1e-2) -> tuple[float, ...]:
    """Log-spaced penalties from the largest off-diagonal |S_ij| down by ``ratio``.

    A single zero penalty is returned when the residual covariance has no
    off-diagonal mass (one series, or exactly uncorrelated residuals).
    """

    covariance = residuals.T @ residuals / residuals.shape[0]
    off_diagonal = np.abs(covariance - np.diag(np.diag(covariance)))
    upper = float(off_diagonal.max()) if covariance.shape[0] > 1 else 0.0
    if not upper > 0:
        return (0.0,)
    return lambda_grid(upper, count, ratio)


def _b_step(
    response: np.ndarray,
    design: np.ndarray,
    omega: np.ndarray,
    lambda_: float,
    initial: np.ndarray | None,
    config: SolverConfig,
) -> np.ndarray:
    n_obs = response.shape[0]
    gram = np.ascontiguousarray(design.T @ design / n_obs)
    omega = np.ascontiguousarray(omega, dtype=float)
    cross = np.ascontiguousarray(design.T @ response @ omega / n_obs)
    if initial is None:
        coef = np.zeros((design.shape[1], response.shape[1]))
    else:
        coef = np.array(initial, dtype=float, order="C", copy=True)
    gradient = np.ascontiguousarray(gram @ coef @ omega)
    sweeps = coordinate_descent(
        gram, cross, omega, coef, gradient, float(lambda_), config.b_tol, config.b_max_sweeps
    )
    if sweeps >= config.b_max_sweeps:
        logger.warning("B-step hit the sweep cap (%d) at lambda=%.3g", config.b_max_sweeps, lambda_)
    return coef


def b_step(
    panel: PanelMatrix,
    omega: np.ndarray,
    lambda_: float,
    *,
    weights: np.ndarray | None = None,
    initial: np.ndarray | None = None,
    config: SolverConfig = DEFAULT_SOLVER,
) -> np.ndarray:
    """Lasso update of the stacked coefficients given Omega, by cyclic coordinate descent.

    Args:
        panel: Response/design panel
        omega: Current precision matrix (symmetric positive definite)
        lambda_: Penalty on every entry of B
        weights: Optional observation weights
        initial: Warm start; zeros when omitted
        config: Solver tolerances

    Returns:
        The ``J*P x J`` coefficient matrix.
    """

    if lambda_ < 0:
        raise ParameterError(f"lambda must be non-negative, got {lambda_}")
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (panel.dimension, panel.dimension):
        raise DimensionError(f"omega must be {panel.dimension}x{panel.dimension}, got {omega.shape}")
    response, design = weighted_arrays(panel, weights)
    return _b_step(response, design, omega, lambda_, initial, config)


def omega_step(residuals: np.ndarray, gamma: float, *, config: SolverConfig = DEFAULT_SOLVER) -> np.ndarray:
    """Graphical-lasso update of Omega from residuals.

    Minimises tr(S Omega) - log|Omega| + 2 gamma sum_{i != j} |omega_ij| with
    S = E'E / N, i.e. twice the Omega part of the joint objective. Variances in
    S are floored at 1e-10 so a zero residual column still yields a finite
    precision.

    Raises:
        DataError: If the residuals contain non-finite values.
        NumericalError: If the solver breaks down on an ill-conditioned S.
    """

    residuals = np.asarray(residuals, dtype=float)
    if residuals.ndim != 2:
        raise DimensionError("residuals must be an N x J matrix")
    if not np.all(np.isfinite(residuals)):
        raise DataError("residuals contain non-finite values")
    if gamma < 0:
        raise ParameterError(f"gamma must be non-negative, got {gamma}")
    n_obs, dimension = residuals.shape
    covariance = residuals.T @ residuals / n_obs
    covariance = 0.5 * (covariance + covariance.T)
    diagonal = np.diag_indices(dimension)
    covariance[diagonal] = np.maximum(covariance[diagonal], _VARIANCE_FLOOR)

    if dimension == 1:
        return np.array([[1.0 / covariance[0, 0]]])
    if gamma == 0:
        try:
            return symmetric_inverse(covariance)
        except NumericalError as exc:
            raise SingularDesignError("residual covariance is singular; use gamma > 0") from exc

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        try:
            _, precision = graphical_lasso(
                covariance,
                alpha=2.0 * gamma,
                tol=config.omega_tol,
                enet_tol=1e-8,
                max_iter=config.omega_max_iter,
            )
        except FloatingPointError as exc:
            raise NumericalError(f"graphical lasso failed at gamma={gamma:.3g}: {exc}") from exc
    for warning in caught:
        if issubclass(warning.category, ConvergenceWarning):
            logger.warning("Omega-step did not converge at gamma=%.3g: %s", gamma, warning.message)
    return 0.5 * (precision + precision.T)


def _select_lambda(
    response: np.ndarray,
    design: np.ndarray,
    omega: np.ndarray,
    grid: Sequence[float],
    initial: np.ndarray | None,
    config: SolverConfig,
) -> LambdaSelection:
    n_obs = response.shape[0]
    # a single penalty continues from the previous iterate, a path starts from zero
    current = initial if len(grid) == 1 else None
    best: tuple[float, float, np.ndarray] | None = None
    path: list[SelectionStep] = []
    for value in grid:
        current = _b_step(response, design, omega, value, current, config)
        residuals = response - design @ current
        df = int(np.count_nonzero(current))
        score = bic(-trace_term(residuals, omega), df, n_obs)
        path.append(SelectionStep(value=float(value), bic=score, df=df))
        # strict comparison along a descending grid keeps the largest tied penalty
        if best is None or score < best[1]:
            best = (float(value), score, current.copy())
    assert best is not None
    return LambdaSelection(chosen=best[0], coefficients=best[2], path=tuple(path))


def select_lambda(
    panel: PanelMatrix,
    omega: np.ndarray,
    grid: Sequence[float],
    *,
    weights: np.ndarray | None = None,
    initial: np.ndarray | None = None,
    config: SolverConfig = DEFAULT_SOLVER,
) -> LambdaSelection:
    """Pick lambda from a descending grid by BIC with the trace log-likelihood and nonzero-count df."""

    if not grid:
        raise ParameterError("lambda grid is empty")
    response, design = weighted_arrays(panel, weights)
    return _select_lambda(response, design, np.asarray(omega, dtype=float), grid, initial, config)


def select_gamma(
    residuals: np.ndarray,
    grid: Sequence[float],
    *,
    config: SolverConfig = DEFAULT_SOLVER,
) -> GammaSelection:
    """Pick gamma from a descending grid by BIC.

    The log-likelihood term is -1/2 tr[E Omega E'] + N/2 log|Omega| and df is
    the number of nonzero entries strictly below the diagonal of Omega. Grid
    points where the graphical lasso breaks down are skipped.
    """

    if not grid:
        raise ParameterError("gamma grid is empty")
    n_obs = residuals.shape[0]
    lower = np.tril_indices(residuals.shape[1], k=-1)
    best: tuple[float, float, np.ndarray] | None = None
    path: list[SelectionStep] = []
    failures: list[str] = []
    for value in grid:
        try:
            precision = omega_step(residuals, value, config=config)
        except NumericalError as exc:
            failures.append(str(exc))
            logger.debug("Skipping gamma=%.3g: %s", value, exc)
            continue
        loglik = -trace_term(residuals, precision) + 0.5 * n_obs * log_det(precision)
        df = int(np.count_nonzero(precision[lower]))
        score = bic(loglik, df, n_obs)
        path.append(SelectionStep(value=float(value), bic=score, df=df))
        if best is None or score < best[1]:
            best = (float(value), score, precision)
    if best is None:
        raise NumericalError(f"Omega-step failed at every gamma: {failures[-1]}")
    return GammaSelection(chosen=best[0], precision=best[2], path=tuple(path))


def _lambda_candidates(
    params: RegularizationParams, response: np.ndarray, design: np.ndarray, omega: np.ndarray
) -> tuple[float, ...]:
    if params.lambda_ is not None:
        return (float(params.lambda_),)
    if params.lambda_grid is not None:
        return params.lambda_grid
    return lambda_grid(_lambda_max(response, design, omega), params.n_lambda, params.lambda_ratio)


def _gamma_candidates(params: RegularizationParams, residuals: np.ndarray) -> tuple[float, ...]:
    if params.gamma is not None:
        return (float(params.gamma),)
    if params.gamma_grid is not None:
        return params.gamma_grid
    return gamma_grid(residuals, params.n_gamma, params.gamma_ratio)


def _standardized_identity(response: np.ndarray) -> np.ndarray:
    variances = np.maximum(np.mean(response**2, axis=0), _VARIANCE_FLOOR)
    return np.diag(1.0 / variances)


def gaussian_lasso(
    panel: PanelMatrix,
    params: RegularizationParams | None = None,
    *,
    weights: np.ndarray | None = None,
    initial_coefficients: np.ndarray | None = None,
    initial_precision: np.ndarray | None = None,
    config: SolverConfig = DEFAULT_SOLVER,
) -> GaussianFit:
    """Alternate BIC-tuned B-steps and Omega-steps until the objective settles.

    Starts from B = 0 (or ``initial_coefficients``) and from Omega equal to the
    identity on the standardized scale, diag(1 / var(y_j)) (or
    ``initial_precision``). Both grids are rebuilt at every alternation, the
    lambda grid from lambda_max at the current Omega and the gamma grid from the
    current residual covariance, so rescaling the data rescales Omega and leaves
    B unchanged. Stops when the relative objective change is at most
    ``config.outer_eps``; on hitting ``config.outer_max_iter`` the best iterate
    is returned with ``converged=False``.
    """

    params = params or RegularizationParams()
    response, design = weighted_arrays(panel, weights)
    if initial_precision is None:
        omega = _standardized_identity(response)
    else:
        omega = np.array(initial_precision, dtype=float)
    coefficients = None if initial_coefficients is None else np.array(initial_coefficients, dtype=float)

    history: list[float] = []
    best: GaussianFit | None = None
    previous: float | None = None
    converged = False
    iteration = 0

    for iteration in range(1, config.outer_max_iter + 1):
        lambdas = _lambda_candidates(params, response, design, omega)
        lam = _select_lambda(response, design, omega, lambdas, coefficients, config)
        coefficients = lam.coefficients
        residuals = response - design @ coefficients
        gam = select_gamma(residuals, _gamma_candidates(params, residuals), config=config)
        omega = gam.precision
        objective = _objective(response, design, coefficients, omega, lam.chosen, gam.chosen)
        if not math.isfinite(objective):
            raise NumericalError("penalized objective is not finite")
        history.append(objective)
        logger.debug(
            "Alternation %d: objective=%.10g lambda=%.3g gamma=%.3g", iteration, objective, lam.chosen, gam.chosen
        )
        if best is None or objective < best.objective:
            best = GaussianFit(
                coefficients=coefficients,
                precision=omega,
                objective=objective,
                chosen=(lam.chosen, gam.chosen),
                iterations=iteration,
            )
        if previous is not None and abs(objective - previous) <= config.outer_eps * max(abs(previous), _RELATIVE_FLOOR):
            converged = True
            break
        previous = objective

    assert best is not None
    if not converged:
        logger.warning("Gaussian lasso did not converge in %d alternations", config.outer_max_iter)
        return GaussianFit(
            coefficients=best.coefficients,
            precision=best.precision,
            objective=best.objective,
            chosen=best.chosen,
            iterations=iteration,
            converged=False,
            history=tuple(history),
        )
    return GaussianFit(
        coefficients=coefficients,
        precision=omega,
        objective=history[-1],
        chosen=(lam.chosen, gam.chosen),
        iterations=iteration,
        converged=True,
        history=tuple(history),
    )


def ls_estimate(panel: PanelMatrix) -> GaussianFit:
    """Unpenalized least squares with Omega the inverse residual covariance.

    Raises:
        SingularDesignError: If X'X is not invertible.
    """

    design, response = panel.design, panel.response
    n_obs, n_features = design.shape
    if n_obs <= n_features or np.linalg.matrix_rank(design) < n_features:
        raise SingularDesignError(
            f"least squares needs a full-rank design; N={n_obs}, J*P={n_features}"
        )
    coefficients, *_ = linalg.lstsq(design, response)
    residuals = response - design @ coefficients
    covariance = residuals.T @ residuals / n_obs
    try:
        precision = symmetric_inverse(covariance)
    except NumericalError as exc:
        raise SingularDesignError("residual covariance of the least-squares fit is singular") from exc
    objective = _objective(response, design, coefficients, precision, 0.0, 0.0)
    return GaussianFit(
        coefficients=coefficients,
        precision=precision,
        objective=objective,
        chosen=(0.0, 0.0),
        iterations=1,
        history=(objective,),
    )
