"""Generalized forecast-error variance decomposition and spillover networks.

Row ``j`` of every matrix is the receiving series, column ``k`` the source of
the shock, so ``spillovers[j, k]`` is the spillover from k to j in percent.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, SingularDispersionError
from .models import NetworkEdge, NetworkExport
from .var import VarModel, stationary, to_vma

logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 5
DEFAULT_RETENTION = 0.15
_COUNT_SLACK = 1e-9


@dataclass(frozen=True, slots=True)
class SpilloverResult:
    """Decomposition of the h-step forecast-error variance.

    Attributes:
        horizon: Forecast horizon h
        fevd: Raw shares w_{h,jk}
        normalized: Row-normalized shares, rows sum to one
        spillovers: ``100 * normalized``
        index: Sum of the off-diagonal spillovers
        dispersion_matrix: Sigma, or Psi when the covariance does not exist
        non_stationary: The model was not stationary; the finite-horizon sums are still valid
    """

    horizon: int
    fevd: np.ndarray
    normalized: np.ndarray
    spillovers: np.ndarray
    index: float
    dispersion_matrix: np.ndarray
    non_stationary: bool = False

    @property
    def dimension(self) -> int:
        return self.fevd.shape[0]


@dataclass(frozen=True, slots=True)
class DirectionalSpillovers:
    """Per-series totals: received from others, transmitted to others, and their difference."""

    from_others: np.ndarray
    to_others: np.ndarray
    net: np.ndarray


def _diagonal_variances(dispersion: np.ndarray) -> np.ndarray:
    variances = np.diag(dispersion)
    if np.any(~(variances > 0)):
        raise SingularDispersionError("dispersion matrix has a non-positive variance")
    return variances


def gfevd(model: VarModel, horizon: int = DEFAULT_HORIZON) -> SpilloverResult:
    """Generalized FEVD at ``horizon`` with normalized shares and the spillover index.

    ``w_jk = sigma_kk^-1 sum_p (theta_p Sigma)_jk^2 / sum_p (theta_p Sigma theta_p')_jj``
    over p = 0..h-1. For t errors with nu <= 2 the scale matrix replaces Sigma.
    """

    if horizon < 1:
        raise ParameterError(f"horizon must be at least 1, got {horizon}")
    dispersion = model.error.dispersion()
    variances = _diagonal_variances(dispersion)
    non_stationary = not stationary(model)
    if non_stationary:
        logger.warning(
            "Decomposing a non-stationary VAR (spectral radius %.4f)", model.spectral_radius()
        )

    thetas = to_vma(model, horizon).thetas
    numerator = np.zeros_like(dispersion)
    denominator = np.zeros(model.dimension)
    for theta in thetas:
        response = theta @ dispersion
        numerator += response**2
        denominator += np.einsum("ij,ij->i", response, theta)
    if np.any(~(denominator > 0)):
        raise SingularDispersionError("forecast-error variance is zero for some series")
    fevd = numerator / variances[None, :] / denominator[:, None]
    normalized = fevd / fevd.sum(axis=1, keepdims=True)
    spillovers = 100.0 * normalized
    index = float(spillovers.sum() - np.trace(spillovers))
    return SpilloverResult(
        horizon=horizon,
        fevd=fevd,
        normalized=normalized,
        spillovers=spillovers,
        index=index,
        dispersion_matrix=dispersion,
        non_stationary=non_stationary,
    )


def generalized_impulse(model: VarModel, shock_index: int, horizon: int = DEFAULT_HORIZON) -> np.ndarray:
    """Responses ``theta_p Sigma delta_k / sqrt(sigma_kk)`` for p = 0..h-1 as an ``h x J`` matrix."""

    if not 0 <= shock_index < model.dimension:
        raise ParameterError(f"shock index {shock_index} outside 0..{model.dimension - 1}")
    dispersion = model.error.dispersion()
    variances = _diagonal_variances(dispersion)
    impulse = dispersion[:, shock_index] / math.sqrt(variances[shock_index])
    thetas = to_vma(model, horizon).thetas
    return np.vstack([theta @ impulse for theta in thetas])


def directional_spillovers(result: SpilloverResult) -> DirectionalSpillovers:
    off_diagonal = result.spillovers - np.diag(np.diag(result.spillovers))
    from_others = off_diagonal.sum(axis=1)
    to_others = off_diagonal.sum(axis=0)
    return DirectionalSpillovers(from_others=from_others, to_others=to_others, net=to_others - from_others)


def default_labels(dimension: int) -> list[str]:
    return [f"y{index + 1}" for index in range(dimension)]


def extract_network(
    result: SpilloverResult,
    quantile: float = DEFAULT_RETENTION,
    labels: Sequence[str] | None = None,
) -> NetworkExport:
    """Keep the largest ``ceil(quantile * J * (J - 1))`` off-diagonal spillovers as directed edges.

    Every spillover tied with the cutoff value is kept as well. Zero spillovers
    never become edges. Edges run from the shocked series to the receiver.
    """

    if not 0 < quantile <= 1:
        raise ParameterError(f"retention quantile must lie in (0, 1], got {quantile}")
    dimension = result.dimension
    names = list(labels) if labels is not None else default_labels(dimension)
    if len(names) != dimension or len(set(names)) != dimension:
        raise ParameterError(f"need {dimension} distinct labels, got {names}")

    candidates = sorted(
        (
            (float(result.spillovers[target, source]), source, target)
            for target in range(dimension)
            for source in range(dimension)
            if source != target
        ),
        key=lambda item: (-item[0], item[1], item[2]),
    )
    retain = math.ceil(quantile * len(candidates) - _COUNT_SLACK)
    edges: list[NetworkEdge] = []
    if candidates and retain > 0:
        cutoff = candidates[min(retain, len(candidates)) - 1][0]
        edges = [
            NetworkEdge(source=names[source], target=names[target], weight=weight)
            for weight, source, target in candidates
            if weight >= cutoff and weight > 0
        ]
    logger.debug("Retained %d of %d spillovers at quantile %.3f", len(edges), len(candidates), quantile)
    return NetworkExport(nodes=names, edges=edges, retention_quantile=quantile, horizon=result.horizon)
