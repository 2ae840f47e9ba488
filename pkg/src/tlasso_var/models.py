"""Validated configuration and report models.

This module holds the Pydantic models that cross a serialisation boundary:
experiment configurations read from JSON files or CLI flags, the penalty
settings handed to the estimators, network exports and the metric reports
written by :mod:`tlasso_var.report_exporter`.

Numeric containers that only live in memory (panels, fits, VAR models) are
plain dataclasses next to the code that produces them.

Type Definitions:
    EstimatorName: One of the four estimators compared by the experiment drivers
    NuSetting: A positive degrees-of-freedom value or the Gaussian marker ``"inf"``
"""

from __future__ import annotations

import json
import math
from datetime import date
from typing import Annotated, Any, Literal

import networkx as nx
from networkx.drawing.nx_pydot import to_pydot
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

EstimatorName = Literal["ls", "gaussian_lasso", "tlasso_fixed", "tlasso_estimated"]
"""Estimator identifiers.

- 'ls': unpenalized least squares
- 'gaussian_lasso': penalized B and Omega under Gaussian errors
- 'tlasso_fixed': t-Lasso with the degrees of freedom held at a given value
- 'tlasso_estimated': t-Lasso with the degrees of freedom estimated by ECM
"""

ALL_ESTIMATORS: tuple[EstimatorName, ...] = ("ls", "gaussian_lasso", "tlasso_fixed", "tlasso_estimated")

GAUSSIAN_MARKER = "inf"

_MIN_PENWIDTH = 0.5
_PENWIDTH_SPAN = 4.5

NuSetting = Annotated[float, Field(gt=0)] | Literal["inf"]


def nu_value(setting: NuSetting) -> float:
    """Numeric degrees of freedom for a setting (``math.inf`` for the Gaussian marker)."""

    return math.inf if setting == GAUSSIAN_MARKER else float(setting)


def nu_label(setting: NuSetting) -> str:
    if setting == GAUSSIAN_MARKER:
        return GAUSSIAN_MARKER
    return f"{float(setting):g}"


def _strictly_descending_positive(values: tuple[float, ...] | None, name: str) -> tuple[float, ...] | None:
    if values is None:
        return None
    if not values:
        raise ValueError(f"{name} must not be empty")
    if any(not value > 0 for value in values):
        raise ValueError(f"{name} entries must be positive")
    if any(later >= earlier for earlier, later in zip(values, values[1:])):
        raise ValueError(f"{name} must be strictly descending")
    return values


class RegularizationParams(BaseModel):
    """Penalty settings for the B-step (lambda) and the Omega-step (gamma).

    A fixed ``lambda``/``gamma`` takes precedence over a grid. Without either,
    grids are built from the data: ``n_lambda`` log-spaced points from
    lambda_max down by ``lambda_ratio`` and ``n_gamma`` points from the largest
    off-diagonal residual covariance down by ``gamma_ratio``.
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lambda_: float | None = Field(default=None, alias="lambda", ge=0)
    gamma: float | None = Field(default=None, ge=0)
    lambda_grid: tuple[float, ...] | None = None
    gamma_grid: tuple[float, ...] | None = None
    n_lambda: int = Field(default=20, ge=1)
    lambda_ratio: float = Field(default=1e-3, gt=0, lt=1)
    n_gamma: int = Field(default=10, ge=1)
    gamma_ratio: float = Field(default=1e-2, gt=0, lt=1)

    @field_validator("lambda_grid")
    @classmethod
    def _check_lambda_grid(cls, value: tuple[float, ...] | None) -> tuple[float, ...] | None:
        return _strictly_descending_positive(value, "lambda_grid")

    @field_validator("gamma_grid")
    @classmethod
    def _check_gamma_grid(cls, value: tuple[float, ...] | None) -> tuple[float, ...] | None:
        return _strictly_descending_positive(value, "gamma_grid")

    @classmethod
    def fixed(cls, lambda_: float, gamma: float) -> RegularizationParams:
        return cls(lambda_=lambda_, gamma=gamma)


class NetworkEdge(BaseModel):
    source: str
    target: str
    weight: float = Field(..., gt=0)


class NetworkExport(BaseModel):
    """Directed, weighted spillover network retaining the largest spillovers.

    Attributes:
        nodes: Series labels
        edges: Retained spillovers ``source -> target`` weighted by s_{h,source->target}
        retention_quantile: Fraction of off-diagonal spillovers kept
        horizon: Forecast horizon of the decomposition
    """

    nodes: list[str]
    edges: list[NetworkEdge] = Field(default_factory=list)
    retention_quantile: float = Field(..., gt=0, le=1)
    horizon: int = Field(default=5, ge=1)

    @model_validator(mode="after")
    def _check_edges(self) -> NetworkExport:
        known = set(self.nodes)
        for edge in self.edges:
            if edge.source == edge.target:
                raise ValueError(f"self-loop on {edge.source!r}")
            if edge.source not in known or edge.target not in known:
                raise ValueError(f"edge {edge.source!r}->{edge.target!r} references unknown node")
        return self

    def to_json(self) -> str:
        """Serialise as ``{nodes: [...], edges: [{source, target, weight}]}`` with 6 significant digits."""

        payload = {
            "nodes": list(self.nodes),
            "edges": [
                {"source": edge.source, "target": edge.target, "weight": round_significant(edge.weight)}
                for edge in self.edges
            ],
        }
        return json.dumps(payload, indent=2)

    def to_graph(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(self.nodes)
        heaviest = max((edge.weight for edge in self.edges), default=1.0)
        for edge in self.edges:
            graph.add_edge(
                edge.source,
                edge.target,
                weight=round_significant(edge.weight),
                penwidth=f"{_MIN_PENWIDTH + _PENWIDTH_SPAN * edge.weight / heaviest:.3f}",
            )
        return graph

    def to_dot(self) -> str:
        """Render a DOT digraph whose edge ``penwidth`` is proportional to the spillover."""

        return to_pydot(self.to_graph()).to_string()


def round_significant(value: float, digits: int = 6) -> float:
    return float(f"{value:.{digits}g}")


class SimStudyConfig(BaseModel):
    """Simulation study over degrees-of-freedom settings."""

    model_config = ConfigDict(frozen=True)

    dimension: int = Field(default=10, ge=1)
    length: int = Field(default=100, ge=2)
    order: int = Field(default=2, ge=1)
    nu_list: tuple[NuSetting, ...] = (1.0, 2.0, 3.0, 5.0, 10.0, GAUSSIAN_MARKER)
    replicates: int = Field(default=100, ge=1, le=1000)
    estimators: tuple[EstimatorName, ...] = ALL_ESTIMATORS
    base_seed: int = 0
    burn_in: int = Field(default=200, ge=0)

    @field_validator("nu_list", mode="before")
    @classmethod
    def _normalise_markers(cls, value: Any) -> Any:
        if isinstance(value, (str, float, int)):
            value = [value]
        normalised = []
        for item in value:
            if isinstance(item, str) and item.strip().lower() in {"inf", "infinity", "gaussian", "∞"}:
                normalised.append(GAUSSIAN_MARKER)
            elif isinstance(item, float) and math.isinf(item):
                normalised.append(GAUSSIAN_MARKER)
            else:
                normalised.append(item)
        return normalised

    @field_validator("nu_list", "estimators")
    @classmethod
    def _non_empty(cls, value: tuple[Any, ...]) -> tuple[Any, ...]:
        if not value:
            raise ValueError("must list at least one entry")
        return value


class RollingConfig(BaseModel):
    """Rolling-window forecasting and spillover pipeline."""

    model_config = ConfigDict(frozen=True)

    window: int = Field(default=220, ge=3)
    horizons: tuple[int, ...] = (1, 5, 20)
    max_order: int = Field(default=3, ge=1)
    estimators: tuple[EstimatorName, ...] = ("tlasso_estimated", "gaussian_lasso", "ls")
    spillover_horizon: int = Field(default=5, ge=1)
    retention_quantile: float = Field(default=0.15, gt=0, le=1)
    network_dates: tuple[date, ...] = ()
    fixed_nu: float | None = Field(default=None, gt=0)

    @field_validator("horizons")
    @classmethod
    def _check_horizons(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if not value or any(h < 1 for h in value):
            raise ValueError("horizons must be positive integers")
        return tuple(sorted(set(value)))

    @model_validator(mode="after")
    def _check_fixed_nu(self) -> RollingConfig:
        if "tlasso_fixed" in self.estimators and self.fixed_nu is None:
            raise ValueError("tlasso_fixed requires fixed_nu")
        if not self.estimators:
            raise ValueError("must list at least one estimator")
        return self


class WindowRecord(BaseModel):
    """Outcome of one rolling window ending at ``end_date``."""

    end_index: int
    end_date: date | None = None
    order: int | None = None
    nu_hat: float | None = None
    spillover_index: float | None = None
    mafe: dict[str, dict[str, float]] = Field(
        default_factory=dict,
        description="horizon label -> estimator -> MAFE_t for windows with a realised target.",
    )
    error: str | None = None


class MetricReport(BaseModel):
    """Aggregated experiment results.

    ``values`` maps a setting label (``"1"``, ``"inf"``, ``"h=5"``) to the
    per-estimator metric; ``exclusions`` counts replicates or windows dropped
    for an estimator because its fit failed.
    """

    metric: Literal["MAEE", "MAFE"]
    estimators: list[str] = Field(default_factory=list)
    settings: list[str] = Field(default_factory=list)
    values: dict[str, dict[str, float | None]] = Field(default_factory=dict)
    exclusions: dict[str, dict[str, int]] = Field(default_factory=dict)
    dof_estimates: dict[str, list[float]] = Field(default_factory=dict)
    windows: list[WindowRecord] = Field(default_factory=list)
    networks: dict[str, NetworkExport] = Field(default_factory=dict)
    config: dict[str, Any] = Field(default_factory=dict)
    seed: int | None = None

    @field_validator("values")
    @classmethod
    def _non_negative(cls, value: dict[str, dict[str, float | None]]) -> dict[str, dict[str, float | None]]:
        for setting, row in value.items():
            for estimator, metric in row.items():
                if metric is not None and metric < 0:
                    raise ValueError(f"negative metric for {estimator} at {setting}")
        return value

    @property
    def is_empty(self) -> bool:
        return not self.values and not self.windows and not self.networks
