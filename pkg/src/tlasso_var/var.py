"""Core VAR data model: lag panels, stationarity, VMA form, forecasting and simulation.

A VAR(P) for a J-dimensional series is stored as P square coefficient matrices
``B_1..B_P`` plus an error distribution. Estimators work on the stacked form
``Y = X B + E`` where ``X = [X_1, ..., X_P]`` holds the lagged values and the
stacked coefficient matrix is ``B = [B_1', ..., B_P']'`` (shape ``J*P x J``).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import linalg

from .errors import (
    DataError,
    DimensionError,
    DistributionDomainError,
    InsufficientDataError,
    NonStationaryError,
    ParameterError,
)

logger = logging.getLogger(__name__)

ErrorKind = Literal["gaussian", "student_t"]

STATIONARITY_TOLERANCE = 1e-10
DEFAULT_BURN_IN = 200
_SYMMETRY_TOLERANCE = 1e-8


@dataclass(frozen=True, slots=True)
class ErrorDistribution:
    """Innovation distribution of a VAR: Gaussian or multivariate Student-t.

    Attributes:
        kind: ``"gaussian"`` or ``"student_t"``
        scale: Scale matrix Psi (equal to the covariance for Gaussian errors)
        dof: Degrees of freedom nu, only meaningful for ``student_t``
        inverse_scale: Cached Omega = Psi^-1
    """

    kind: ErrorKind
    scale: np.ndarray
    dof: float | None = None
    inverse_scale: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        scale = np.atleast_2d(np.asarray(self.scale, dtype=float))
        if scale.ndim != 2 or scale.shape[0] != scale.shape[1]:
            raise DimensionError(f"scale matrix must be square, got shape {scale.shape}")
        if not np.all(np.isfinite(scale)):
            raise DataError("scale matrix contains non-finite entries")
        if np.max(np.abs(scale - scale.T)) > _SYMMETRY_TOLERANCE * max(1.0, np.max(np.abs(scale))):
            raise ParameterError("scale matrix must be symmetric")
        try:
            cholesky = linalg.cholesky(scale, lower=True)
        except linalg.LinAlgError as exc:
            raise ParameterError("scale matrix must be positive definite") from exc
        if self.kind == "student_t":
            if self.dof is None or not self.dof > 0:
                raise ParameterError(f"degrees of freedom must be positive, got {self.dof}")
        elif self.kind != "gaussian":
            raise ParameterError(f"unknown error distribution kind {self.kind!r}")
        inverse = linalg.cho_solve((cholesky, True), np.eye(scale.shape[0]))
        inverse = 0.5 * (inverse + inverse.T)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "inverse_scale", inverse)

    @classmethod
    def gaussian(cls, scale: np.ndarray) -> ErrorDistribution:
        return cls(kind="gaussian", scale=scale)

    @classmethod
    def student_t(cls, dof: float, scale: np.ndarray) -> ErrorDistribution:
        if math.isinf(dof):
            return cls(kind="gaussian", scale=scale)
        return cls(kind="student_t", scale=scale, dof=float(dof))

    @property
    def dimension(self) -> int:
        return self.scale.shape[0]

    def covariance(self) -> np.ndarray:
        """Return Sigma; for Student-t errors Sigma = Psi * nu / (nu - 2).

        Raises:
            DistributionDomainError: If nu <= 2 (the covariance does not exist).
        """

        if self.kind == "gaussian":
            return self.scale.copy()
        assert self.dof is not None
        if self.dof <= 2:
            raise DistributionDomainError(
                f"covariance is undefined for nu={self.dof:g} <= 2; use the scale matrix"
            )
        return self.scale * self.dof / (self.dof - 2.0)

    def dispersion(self) -> np.ndarray:
        """Sigma when it exists, otherwise the scale matrix Psi."""

        if self.kind == "student_t" and self.dof is not None and self.dof <= 2:
            return self.scale.copy()
        return self.covariance()


@dataclass(frozen=True, slots=True)
class VarModel:
    """VAR(P) with lag matrices ``coefficients[p-1] = B_p`` and an error distribution.

    ``means`` holds the column means removed when the estimation panel was
    centered; forecasts add them back.
    """

    coefficients: tuple[np.ndarray, ...]
    error: ErrorDistribution
    means: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not self.coefficients:
            raise ParameterError("a VAR needs at least one lag matrix")
        matrices = tuple(np.atleast_2d(np.asarray(b, dtype=float)) for b in self.coefficients)
        dimension = matrices[0].shape[0]
        for lag, matrix in enumerate(matrices, start=1):
            if matrix.shape != (dimension, dimension):
                raise DimensionError(
                    f"B_{lag} has shape {matrix.shape}; expected ({dimension}, {dimension})"
                )
        if self.error.dimension != dimension:
            raise DimensionError(
                f"error distribution has dimension {self.error.dimension}, coefficients {dimension}"
            )
        object.__setattr__(self, "coefficients", matrices)
        if self.means is not None:
            means = np.asarray(self.means, dtype=float).reshape(-1)
            if means.shape != (dimension,):
                raise DimensionError(f"means must have length {dimension}")
            object.__setattr__(self, "means", means)

    @classmethod
    def from_stacked(
        cls,
        stacked: np.ndarray,
        error: ErrorDistribution,
        means: np.ndarray | None = None,
    ) -> VarModel:
        """Build a model from a stacked ``J*P x J`` estimate ``[B_1', ..., B_P']'``."""

        stacked = np.asarray(stacked, dtype=float)
        rows, dimension = stacked.shape
        if dimension == 0 or rows % dimension:
            raise DimensionError(f"stacked coefficients of shape {stacked.shape} are not J*P x J")
        order = rows // dimension
        lags = tuple(stacked[p * dimension : (p + 1) * dimension].T.copy() for p in range(order))
        return cls(coefficients=lags, error=error, means=means)

    @property
    def order(self) -> int:
        return len(self.coefficients)

    @property
    def dimension(self) -> int:
        return self.coefficients[0].shape[0]

    def stacked(self) -> np.ndarray:
        return np.vstack([b.T for b in self.coefficients])

    def companion(self) -> np.ndarray:
        dimension, order = self.dimension, self.order
        size = dimension * order
        matrix = np.zeros((size, size))
        matrix[:dimension, :] = np.hstack(self.coefficients)
        if order > 1:
            matrix[dimension:, :-dimension] = np.eye(size - dimension)
        return matrix

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(linalg.eigvals(self.companion()))))


@dataclass(frozen=True, slots=True)
class PanelMatrix:
    """Stacked response ``Y`` (N x J) and lagged design ``X`` (N x J*P).

    ``means`` are the column means subtracted from the raw series when
    ``centered`` is true (zeros otherwise).
    """

    response: np.ndarray
    design: np.ndarray
    order: int
    centered: bool
    means: np.ndarray

    def __post_init__(self) -> None:
        n_obs, dimension = self.response.shape
        if self.design.shape != (n_obs, dimension * self.order):
            raise DimensionError(
                f"design has shape {self.design.shape}; expected ({n_obs}, {dimension * self.order})"
            )
        for lag in range(1, self.order + 1):
            if lag >= n_obs:
                break
            block = self.design[lag:, (lag - 1) * dimension : lag * dimension]
            if not np.array_equal(block, self.response[:-lag]):
                raise DataError(f"design block for lag {lag} is not the response shifted by {lag}")

    @property
    def n_obs(self) -> int:
        return self.response.shape[0]

    @property
    def dimension(self) -> int:
        return self.response.shape[1]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.n_obs, self.dimension, self.order

    def history(self) -> np.ndarray:
        """Last ``P`` observations of the panel on the original scale, oldest first."""

        return reconstruct_series(self)[-self.order :]


@dataclass(frozen=True, slots=True)
class VmaCoefficients:
    """Moving-average matrices theta_0..theta_{H-1} with theta_0 = I."""

    horizon: int
    thetas: tuple[np.ndarray, ...]


def _as_series(series: np.ndarray) -> np.ndarray:
    array = np.asarray(series, dtype=float)
    if array.ndim == 1:
        array = array[:, None]
    if array.ndim != 2:
        raise DimensionError(f"series must be a T x J matrix, got {array.ndim} dimensions")
    return array


def build_panel(series: np.ndarray, order: int, center: bool = True) -> PanelMatrix:
    """Construct ``Y`` (rows P+1..T) and the lag-stacked ``X`` from a T x J series.

    Args:
        series: Raw observations, one row per time point
        order: Lag order P
        center: Subtract each column's sample mean before lagging

    Raises:
        InsufficientDataError: If T <= P.
        DataError: If the series contains non-finite values.
    """

    raw = _as_series(series)
    if order < 1:
        raise ParameterError(f"lag order must be a positive integer, got {order}")
    length, dimension = raw.shape
    if length <= order:
        raise InsufficientDataError(f"need more than {order} observations, got {length}")
    if not np.all(np.isfinite(raw)):
        raise DataError("series contains non-finite values")

    means = raw.mean(axis=0) if center else np.zeros(dimension)
    values = raw - means if center else raw
    response = values[order:].copy()
    design = np.hstack([values[order - lag : length - lag] for lag in range(1, order + 1)])
    return PanelMatrix(response=response, design=design, order=order, centered=center, means=means)


def reconstruct_series(panel: PanelMatrix) -> np.ndarray:
    """Recover the raw T x J series from a panel (inverse of :func:`build_panel`)."""

    dimension, order = panel.dimension, panel.order
    head = np.vstack(
        [panel.design[0, (order - k - 1) * dimension : (order - k) * dimension] for k in range(order)]
    )
    return np.vstack([head, panel.response]) + panel.means


def stationary(model: VarModel) -> bool:
    """True iff the companion matrix has spectral radius below ``1 - 1e-10``."""

    return model.spectral_radius() < 1.0 - STATIONARITY_TOLERANCE


def to_vma(model: VarModel, horizon: int) -> VmaCoefficients:
    """Compute theta_0..theta_{H-1} with theta_s = sum_{i<=min(s,P)} B_i theta_{s-i}."""

    if horizon < 1:
        raise ParameterError(f"horizon must be at least 1, got {horizon}")
    thetas: list[np.ndarray] = [np.eye(model.dimension)]
    for step in range(1, horizon):
        theta = np.zeros((model.dimension, model.dimension))
        for lag in range(1, min(step, model.order) + 1):
            theta += model.coefficients[lag - 1] @ thetas[step - lag]
        thetas.append(theta)
    return VmaCoefficients(horizon=horizon, thetas=tuple(thetas))


def forecast(model: VarModel, history: np.ndarray, horizon: int) -> np.ndarray:
    """Iterated point forecasts for steps 1..h with future errors set to zero.

    Args:
        model: Fitted VAR; ``model.means`` is removed before and re-added after iterating
        history: The last P observations in time order (oldest first), original scale
        horizon: Number of steps ahead

    Returns:
        An ``h x J`` matrix of forecasts.
    """

    past = _as_series(history)
    if past.shape != (model.order, model.dimension):
        raise DimensionError(
            f"history must have shape ({model.order}, {model.dimension}), got {past.shape}"
        )
    if horizon < 1:
        raise ParameterError(f"horizon must be at least 1, got {horizon}")
    means = model.means if model.means is not None else np.zeros(model.dimension)
    window = list(past - means)
    predictions = np.empty((horizon, model.dimension))
    for step in range(horizon):
        value = np.zeros(model.dimension)
        for lag, matrix in enumerate(model.coefficients, start=1):
            value += matrix @ window[-lag]
        predictions[step] = value
        window.append(value)
    return predictions + means


def _generator(seed: int | np.random.Generator) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_mvt(n: int, dist: ErrorDistribution, seed: int | np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. innovations as phi / sqrt(tau), phi ~ N(0, Psi), tau ~ Gamma(nu/2, nu/2).

    Gaussian errors use tau = 1.
    """

    if dist.kind == "student_t" and (dist.dof is None or not dist.dof > 0):
        raise ParameterError(f"degrees of freedom must be positive, got {dist.dof}")
    if n < 0:
        raise ParameterError(f"sample size must be non-negative, got {n}")
    rng = _generator(seed)
    cholesky = linalg.cholesky(dist.scale, lower=True)
    phi = rng.standard_normal((n, dist.dimension)) @ cholesky.T
    if dist.kind == "gaussian":
        return phi
    assert dist.dof is not None
    tau = rng.gamma(shape=dist.dof / 2.0, scale=2.0 / dist.dof, size=n)
    return phi / np.sqrt(tau)[:, None]


def simulate_var(
    model: VarModel,
    length: int,
    burn_in: int = DEFAULT_BURN_IN,
    seed: int | np.random.Generator = 0,
) -> np.ndarray:
    """Simulate ``burn_in + length`` steps from a zero start and keep the last ``length`` rows.

    Raises:
        NonStationaryError: If the model is not stationary.
    """

    if burn_in < 0 or length < 1:
        raise ParameterError("length must be positive and burn_in non-negative")
    if not stationary(model):
        raise NonStationaryError(
            f"refusing to simulate a non-stationary VAR (spectral radius {model.spectral_radius():.6f})"
        )
    total = burn_in + length
    shocks = sample_mvt(total, model.error, seed)
    order, dimension = model.order, model.dimension
    path = np.zeros((total + order, dimension))
    for t in range(order, total + order):
        value = shocks[t - order].copy()
        for lag, matrix in enumerate(model.coefficients, start=1):
            value += matrix @ path[t - lag]
        path[t] = value
    simulated = path[order + burn_in :]
    if model.means is not None:
        simulated = simulated + model.means
    return simulated


def dgp_model(dimension: int = 10, order: int = 2, nu: float = math.inf) -> VarModel:
    """The simulation-study DGP: sparse lags on the diagonal and first row, banded Psi.

    Lag p carries ``0.4 / p`` on the main diagonal and the first row (0.4 and
    0.2 for the two-lag design), and psi_ij = 0.1^|i-j|. ``nu=inf`` gives
    Gaussian innovations.
    """

    if dimension < 1 or order < 1:
        raise ParameterError("dimension and order must be positive")
    lags = []
    for lag in range(1, order + 1):
        value = 0.4 / lag
        matrix = np.diag(np.full(dimension, value))
        matrix[0, :] = value
        lags.append(matrix)
    index = np.arange(dimension)
    scale = 0.1 ** np.abs(index[:, None] - index[None, :])
    return VarModel(coefficients=tuple(lags), error=ErrorDistribution.student_t(nu, scale))
