"""t-Lasso: penalized VAR estimation under multivariate Student-t errors.

The t errors are handled as a Gaussian scale mixture. Each EM iteration
computes the posterior mean weights tau_t of the latent Gamma variables
(E-step) and refits the penalized Gaussian problem on sqrt(tau)-scaled rows
(M-step). The ECM variant adds a conditional maximisation over the degrees of
freedom nu after a second E-step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln

from .errors import DimensionError, ParameterError
from .gaussian import (
    DEFAULT_SOLVER,
    GaussianFit,
    SolverConfig,
    gaussian_lasso,
    log_det,
    off_diagonal_l1,
    symmetric_inverse,
    weighted_arrays,
)
from .models import RegularizationParams
from .special import digamma
from .var import ErrorDistribution, PanelMatrix, VarModel

logger = logging.getLogger(__name__)

NuCorrection = Literal["per_observation", "averaged"]
"""Weight of the expectation-correction term in the nu equation.

- 'per_observation': the correction enters with weight one (consistent for nu)
- 'averaged': the correction enters divided by N; it shrinks with N and, on
  heavy-tailed data, leaves the equation without a root so nu_hat sits on the
  upper search bound
"""

DEFAULT_NU_CORRECTION: NuCorrection = "per_observation"

DEFAULT_NU_BOUNDS = (0.05, 1000.0)
DEFAULT_NU_INIT = 1000.0
_BRACKET_POINTS = 64
_RELATIVE_FLOOR = 1e-8


@dataclass(frozen=True, slots=True)
class TDensityParams:
    """Parameters of a centred multivariate t density with precision ``omega``."""

    nu: float
    omega: np.ndarray
    dimension: int = field(init=False)

    def __post_init__(self) -> None:
        if not self.nu > 0:
            raise ParameterError(f"degrees of freedom must be positive, got {self.nu}")
        omega = np.atleast_2d(np.asarray(self.omega, dtype=float))
        if omega.shape[0] != omega.shape[1]:
            raise DimensionError(f"omega must be square, got {omega.shape}")
        try:
            np.linalg.cholesky(omega)
        except np.linalg.LinAlgError as exc:
            raise ParameterError("omega must be positive definite") from exc
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "dimension", omega.shape[0])


def _log_density_terms(quadratic: np.ndarray, nu: float, log_det: float, dimension: int) -> np.ndarray:
    if math.isinf(nu):
        return -0.5 * dimension * math.log(2.0 * math.pi) + 0.5 * log_det - 0.5 * quadratic
    return (
        gammaln(0.5 * (nu + dimension))
        - gammaln(0.5 * nu)
        - 0.5 * dimension * math.log(math.pi * nu)
        + 0.5 * log_det
        - 0.5 * (nu + dimension) * np.log1p(quadratic / nu)
    )


def t_log_density(e: np.ndarray, params: TDensityParams) -> float:
    """Log density of a centred multivariate t at ``e``; ``nu=inf`` gives the Gaussian density."""

    e = np.asarray(e, dtype=float).reshape(-1)
    if e.shape != (params.dimension,):
        raise DimensionError(f"expected a vector of length {params.dimension}, got {e.shape[0]}")
    quadratic = np.array([e @ params.omega @ e])
    return float(_log_density_terms(quadratic, params.nu, log_det(params.omega), params.dimension)[0])


def mahalanobis(residuals: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Row-wise e_t' Omega e_t."""

    return np.sum((residuals @ omega) * residuals, axis=1)


def t_log_likelihood(residuals: np.ndarray, nu: float, omega: np.ndarray) -> float:
    """Sum of t log densities over the rows of ``residuals``."""

    residuals = np.atleast_2d(np.asarray(residuals, dtype=float))
    quadratic = mahalanobis(residuals, omega)
    return float(np.sum(_log_density_terms(quadratic, nu, log_det(omega), residuals.shape[1])))


def penalized_t_objective(
    panel: PanelMatrix,
    coefficients: np.ndarray,
    precision: np.ndarray,
    nu: float,
    lambda_: float,
    gamma: float,
) -> float:
    """Penalized t negative log-likelihood per observation; EM never increases it at fixed penalties."""

    residuals = panel.response - panel.design @ coefficients
    return (
        -t_log_likelihood(residuals, nu, precision) / panel.n_obs
        + lambda_ * float(np.abs(coefficients).sum())
        + gamma * off_diagonal_l1(precision)
    )


def e_step_weights(residuals: np.ndarray, omega: np.ndarray, nu: float) -> np.ndarray:
    """Posterior mean weights tau_t = (nu + J) / (nu + e_t' Omega e_t).

    An infinite ``nu`` returns unit weights.
    """

    if not nu > 0:
        raise ParameterError(f"degrees of freedom must be positive, got {nu}")
    residuals = np.atleast_2d(np.asarray(residuals, dtype=float))
    if math.isinf(nu):
        return np.ones(residuals.shape[0])
    dimension = residuals.shape[1]
    return (nu + dimension) / (nu + mahalanobis(residuals, omega))


def scaled_data(panel: PanelMatrix, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The M-step inputs ``(sqrt(tau) * Y, sqrt(tau) * X)``."""

    return weighted_arrays(panel, weights)


def nu_equation_lhs(
    nu: float | np.ndarray,
    weights: np.ndarray,
    dimension: int,
    correction: NuCorrection = DEFAULT_NU_CORRECTION,
) -> float | np.ndarray:
    """Left-hand side of the estimating equation for the degrees of freedom.

    ``-psi(nu/2) + log(nu/2) + mean(log tau - tau) + 1 + c [psi((nu+J)/2) - log((nu+J)/2)]``
    with ``c = 1/N`` (``"averaged"``) or ``c = 1`` (``"per_observation"``).
    The value decreases in nu; a root is the CM-step estimate.
    """

    weights = np.asarray(weights, dtype=float).reshape(-1)
    if weights.size == 0 or np.any(~(weights > 0)):
        raise ParameterError("weights must be a non-empty vector of positive values")
    if correction == "averaged":
        scale = 1.0 / weights.size
    elif correction == "per_observation":
        scale = 1.0
    else:
        raise ParameterError(f"unknown nu correction {correction!r}")
    nu_array = np.asarray(nu, dtype=float)
    half = 0.5 * nu_array
    shifted = 0.5 * (nu_array + dimension)
    value = (
        -digamma(half)
        + np.log(half)
        + float(np.mean(np.log(weights) - weights))
        + 1.0
        + scale * (digamma(shifted) - np.log(shifted))
    )
    if np.ndim(value) == 0:
        return float(value)
    return value


def solve_nu(
    weights: np.ndarray,
    dimension: int,
    bounds: tuple[float, float] = DEFAULT_NU_BOUNDS,
    correction: NuCorrection = DEFAULT_NU_CORRECTION,
) -> tuple[float, bool]:
    """Solve the nu equation inside ``bounds``.

    The root is bracketed on a 64-point log grid and refined with Brent's
    method. Without a sign change the bound with the smaller ``|lhs|`` is
    returned.

    Returns:
        ``(nu_hat, on_bound)`` where ``on_bound`` flags a clamped estimate.
    """

    lower, upper = bounds
    if not 0 < lower <= upper:
        raise ParameterError(f"invalid nu bounds {bounds}")
    if lower == upper:
        return float(lower), True

    def lhs(nu: float) -> float:
        return nu_equation_lhs(nu, weights, dimension, correction)

    grid = np.geomspace(lower, upper, _BRACKET_POINTS)
    values = nu_equation_lhs(grid, weights, dimension, correction)
    for left, right, f_left, f_right in zip(grid[:-1], grid[1:], values[:-1], values[1:]):
        if f_left == 0.0:
            return float(left), False
        if f_left * f_right < 0.0:
            return float(brentq(lhs, left, right, xtol=1e-12)), False
    if values[-1] == 0.0:
        return float(upper), False
    if abs(values[0]) < abs(values[-1]):
        return float(lower), True
    return float(upper), True


@dataclass(frozen=True, slots=True)
class TlassoIteration:
    """Per-iteration trace of an EM or ECM run."""

    iteration: int
    objective: float
    t_objective: float
    dof: float
    chosen: tuple[float, float]


@dataclass(frozen=True, slots=True)
class TlassoFit:
    """Result of :func:`em_fixed_nu` or :func:`ecm_estimate`.

    Attributes:
        coefficients: Stacked ``J*P x J`` coefficient estimate
        precision: Estimated Omega = Psi^-1
        dof: Degrees of freedom, fixed or estimated
        weights: E-step weights tau_t from the final iteration
        objective: Weighted penalized objective after the final M-step
        iterations: EM/ECM iterations performed
        converged: False when the iteration cap was hit
        chosen: (lambda, gamma) of the final M-step
        dof_on_bound: True when the nu estimate was clamped to a search bound
        history: Per-iteration trace
    """

    coefficients: np.ndarray
    precision: np.ndarray
    dof: float
    weights: np.ndarray
    objective: float
    iterations: int
    converged: bool
    chosen: tuple[float, float] = (0.0, 0.0)
    dof_on_bound: bool = False
    history: tuple[TlassoIteration, ...] = ()

    def to_model(self, means: np.ndarray | None = None) -> VarModel:
        scale = symmetric_inverse(self.precision)
        return VarModel.from_stacked(self.coefficients, ErrorDistribution.student_t(self.dof, scale), means=means)


def _initial_state(panel: PanelMatrix) -> tuple[np.ndarray, np.ndarray]:
    dimension = panel.dimension
    return np.vstack([np.eye(dimension)] * panel.order), np.eye(dimension)


def _m_step(
    panel: PanelMatrix,
    params: RegularizationParams,
    weights: np.ndarray,
    coefficients: np.ndarray,
    precision: np.ndarray,
    config: SolverConfig,
) -> GaussianFit:
    return gaussian_lasso(
        panel,
        params,
        weights=weights,
        initial_coefficients=coefficients,
        initial_precision=precision,
        config=config,
    )


def _settled(objective: float, previous: float | None, eps: float) -> bool:
    return previous is not None and abs(objective - previous) <= eps * max(abs(previous), _RELATIVE_FLOOR)


def em_fixed_nu(
    panel: PanelMatrix,
    nu: float,
    params: RegularizationParams | None = None,
    eps: float | None = None,
    *,
    config: SolverConfig = DEFAULT_SOLVER,
) -> TlassoFit:
    """EM for the t-Lasso with the degrees of freedom held at ``nu``.

    Starts from B_p = I and Omega = I. Each iteration computes the weights and
    refits the penalized Gaussian problem on the weighted rows, warm-started at
    the current estimate. Stops when the weighted objective changes by less
    than ``eps`` relative; on the iteration cap returns the iterate with the
    smallest penalized t negative log-likelihood and ``converged=False``.
    """

    if not nu > 0:
        raise ParameterError(f"degrees of freedom must be positive, got {nu}")
    params = params or RegularizationParams()
    eps = config.em_eps if eps is None else eps
    coefficients, precision = _initial_state(panel)
    history: list[TlassoIteration] = []
    best: tuple[float, TlassoFit] | None = None
    previous: float | None = None

    for iteration in range(1, config.em_max_iter + 1):
        residuals = panel.response - panel.design @ coefficients
        weights = e_step_weights(residuals, precision, nu)
        fit = _m_step(panel, params, weights, coefficients, precision, config)
        coefficients, precision = fit.coefficients, fit.precision
        t_objective = penalized_t_objective(panel, coefficients, precision, nu, *fit.chosen)
        history.append(TlassoIteration(iteration, fit.objective, t_objective, float(nu), fit.chosen))
        logger.debug("EM iteration %d: objective=%.10g t-objective=%.10g", iteration, fit.objective, t_objective)
        current = TlassoFit(
            coefficients=coefficients,
            precision=precision,
            dof=float(nu),
            weights=weights,
            objective=fit.objective,
            iterations=iteration,
            converged=True,
            chosen=fit.chosen,
        )
        if best is None or t_objective < best[0]:
            best = (t_objective, current)
        if _settled(fit.objective, previous, eps):
            logger.info("EM converged after %d iterations (nu=%g)", iteration, nu)
            return _with_history(current, history)
        previous = fit.objective

    logger.warning("EM did not converge in %d iterations (nu=%g)", config.em_max_iter, nu)
    assert best is not None
    return _finish_unconverged(best[1], history)


def _with_history(fit: TlassoFit, history: list[TlassoIteration]) -> TlassoFit:
    return TlassoFit(
        coefficients=fit.coefficients,
        precision=fit.precision,
        dof=fit.dof,
        weights=fit.weights,
        objective=fit.objective,
        iterations=fit.iterations,
        converged=fit.converged,
        chosen=fit.chosen,
        dof_on_bound=fit.dof_on_bound,
        history=tuple(history),
    )


def _finish_unconverged(best: TlassoFit, history: list[TlassoIteration]) -> TlassoFit:
    return TlassoFit(
        coefficients=best.coefficients,
        precision=best.precision,
        dof=best.dof,
        weights=best.weights,
        objective=best.objective,
        iterations=len(history),
        converged=False,
        chosen=best.chosen,
        dof_on_bound=best.dof_on_bound,
        history=tuple(history),
    )


def ecm_estimate(
    panel: PanelMatrix,
    params: RegularizationParams | None = None,
    eps: float | None = None,
    *,
    nu_bounds: tuple[float, float] = DEFAULT_NU_BOUNDS,
    nu_init: float = DEFAULT_NU_INIT,
    nu_correction: NuCorrection = DEFAULT_NU_CORRECTION,
    config: SolverConfig = DEFAULT_SOLVER,
) -> TlassoFit:
    """ECM for the t-Lasso with estimated degrees of freedom.

    Each iteration runs an E-step, the penalized Gaussian CM-step on the
    weighted rows, a second E-step with the new residuals, and the
    one-dimensional CM-step for nu (:func:`solve_nu`). The starting nu is
    ``nu_init`` clamped to ``nu_bounds``.
    """

    params = params or RegularizationParams()
    eps = config.em_eps if eps is None else eps
    lower, upper = nu_bounds
    if not 0 < lower <= upper:
        raise ParameterError(f"invalid nu bounds {nu_bounds}")
    nu = min(max(float(nu_init), lower), upper)
    coefficients, precision = _initial_state(panel)
    dimension = panel.dimension
    history: list[TlassoIteration] = []
    best: tuple[float, TlassoFit] | None = None
    previous: float | None = None

    for iteration in range(1, config.em_max_iter + 1):
        residuals = panel.response - panel.design @ coefficients
        weights = e_step_weights(residuals, precision, nu)
        fit = _m_step(panel, params, weights, coefficients, precision, config)
        coefficients, precision = fit.coefficients, fit.precision

        residuals = panel.response - panel.design @ coefficients
        weights = e_step_weights(residuals, precision, nu)
        nu, on_bound = solve_nu(weights, dimension, nu_bounds, nu_correction)

        t_objective = penalized_t_objective(panel, coefficients, precision, nu, *fit.chosen)
        history.append(TlassoIteration(iteration, fit.objective, t_objective, nu, fit.chosen))
        logger.debug("ECM iteration %d: objective=%.10g nu=%.6g", iteration, fit.objective, nu)
        current = TlassoFit(
            coefficients=coefficients,
            precision=precision,
            dof=nu,
            weights=weights,
            objective=fit.objective,
            iterations=iteration,
            converged=True,
            chosen=fit.chosen,
            dof_on_bound=on_bound,
        )
        if best is None or t_objective < best[0]:
            best = (t_objective, current)
        if _settled(fit.objective, previous, eps):
            logger.info("ECM converged after %d iterations (nu_hat=%.4g)", iteration, nu)
            if on_bound:
                logger.warning("Degrees of freedom estimate sits on the search bound %.4g", nu)
            return _with_history(current, history)
        previous = fit.objective

    logger.warning("ECM did not converge in %d iterations", config.em_max_iter)
    assert best is not None
    return _finish_unconverged(best[1], history)
