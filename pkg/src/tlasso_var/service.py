"""Experiment drivers: estimator dispatch, the simulation study and the rolling backtest.

This module coordinates:
    - Fitting any of the four estimators on a lag panel
    - Lag-order selection by Gaussian-lasso BIC on a common effective sample
    - The Monte Carlo study of coefficient recovery (MAEE per nu and estimator)
    - The rolling-window pipeline (order selection, forecasts, MAFE, spillover
      index, networks at requested dates)

Replicates and windows are independent tasks run in a process pool; results
are reduced in task order so a report depends only on its configuration and
seed.
"""

from __future__ import annotations

import logging
import math
import os
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Literal, TypeVar

import numpy as np

from .errors import DimensionError, InsufficientDataError, ParameterError, TlassoVarError
from .gaussian import (
    SolverConfig,
    bic,
    gaussian_lasso,
    log_det,
    ls_estimate,
    trace_term,
)
from .models import (
    EstimatorName,
    MetricReport,
    NetworkExport,
    RegularizationParams,
    RollingConfig,
    SimStudyConfig,
    WindowRecord,
    nu_label,
    nu_value,
)
from .spillover import extract_network, gfevd
from .tlasso import DEFAULT_NU_BOUNDS, DEFAULT_NU_CORRECTION, NuCorrection, ecm_estimate, em_fixed_nu
from .var import PanelMatrix, VarModel, build_panel, dgp_model, forecast, simulate_var
from .volatility import VolatilityPanel

logger = logging.getLogger(__name__)

WORKERS_ENV = "TLASSO_VAR_WORKERS"
_SPILLOVER_PREFERENCE: tuple[EstimatorName, ...] = ("tlasso_estimated", "tlasso_fixed", "gaussian_lasso", "ls")
_FIT_FAILURES = (TlassoVarError, np.linalg.LinAlgError, FloatingPointError)

T = TypeVar("T")
R = TypeVar("R")


def _default_workers() -> int:
    raw = os.getenv(WORKERS_ENV)
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("Ignoring non-integer %s=%r", WORKERS_ENV, raw)
        return 1


@dataclass(slots=True)
class ExecutionConfig:
    """Runtime settings shared by every fit of an experiment.

    Attributes:
        workers: Worker processes; 1 runs tasks inline (default from ``TLASSO_VAR_WORKERS``)
        solver: Tolerances and iteration caps
        params: Penalty grids or fixed penalties
        nu_bounds: Search interval of the degrees-of-freedom CM-step
        nu_correction: Form of the correction term in the nu equation
    """

    workers: int = field(default_factory=_default_workers)
    solver: SolverConfig = field(default_factory=SolverConfig)
    params: RegularizationParams = field(default_factory=RegularizationParams)
    nu_bounds: tuple[float, float] = DEFAULT_NU_BOUNDS
    nu_correction: NuCorrection = DEFAULT_NU_CORRECTION


ProgressEventType = Literal["study_start", "replicate_end", "window_end", "study_end", "failure"]


@dataclass(slots=True)
class ProgressEvent:
    """Lightweight notification payload for experiment progress."""

    event: ProgressEventType
    completed: int | None = None
    total: int | None = None
    payload: dict[str, Any] | None = None


ProgressCallback = Callable[[ProgressEvent], None]


@dataclass(frozen=True, slots=True)
class FittedEstimator:
    """A fitted VAR plus the estimator-specific extras needed by the drivers."""

    estimator: EstimatorName
    model: VarModel
    dof: float | None = None
    converged: bool = True
    chosen: tuple[float, float] = (0.0, 0.0)


def mean_absolute_estimation_error(estimate: np.ndarray | VarModel, truth: np.ndarray | VarModel) -> float:
    """Mean of |B_hat - B| over every lag and entry."""

    estimated = estimate.stacked() if isinstance(estimate, VarModel) else np.asarray(estimate, dtype=float)
    true = truth.stacked() if isinstance(truth, VarModel) else np.asarray(truth, dtype=float)
    if estimated.shape != true.shape:
        raise DimensionError(f"cannot compare coefficients of shapes {estimated.shape} and {true.shape}")
    return float(np.mean(np.abs(estimated - true)))


def mean_absolute_forecast_error(predicted: np.ndarray, actual: np.ndarray) -> float:
    """Mean over series of |y_hat - y| for one target date."""

    predicted = np.asarray(predicted, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if predicted.shape != actual.shape:
        raise DimensionError(f"forecast shape {predicted.shape} differs from actual {actual.shape}")
    return float(np.mean(np.abs(predicted - actual)))


def fit_estimator(
    panel: PanelMatrix,
    estimator: EstimatorName,
    *,
    nu: float | None = None,
    execution: ExecutionConfig | None = None,
) -> FittedEstimator:
    """Fit one of the four estimators and return it as a VAR model on the original scale.

    Raises:
        ParameterError: If ``tlasso_fixed`` is requested without ``nu``.
    """

    execution = execution or ExecutionConfig()
    solver, params = execution.solver, execution.params
    if estimator == "ls":
        fit = ls_estimate(panel)
        return FittedEstimator(estimator, fit.to_model(panel.means))
    if estimator == "gaussian_lasso":
        fit = gaussian_lasso(panel, params, config=solver)
        return FittedEstimator(estimator, fit.to_model(panel.means), converged=fit.converged, chosen=fit.chosen)
    if estimator == "tlasso_fixed":
        if nu is None:
            raise ParameterError("tlasso_fixed needs the degrees of freedom")
        t_fit = em_fixed_nu(panel, nu, params, config=solver)
    elif estimator == "tlasso_estimated":
        t_fit = ecm_estimate(
            panel,
            params,
            nu_bounds=execution.nu_bounds,
            nu_correction=execution.nu_correction,
            config=solver,
        )
    else:
        raise ParameterError(f"unknown estimator {estimator!r}")
    return FittedEstimator(
        estimator, t_fit.to_model(panel.means), dof=t_fit.dof, converged=t_fit.converged, chosen=t_fit.chosen
    )


def select_order(
    series: np.ndarray,
    max_order: int,
    *,
    execution: ExecutionConfig | None = None,
) -> int:
    """Choose the lag order in 1..max_order by Gaussian-lasso BIC.

    The series is centred once and every candidate is fitted on the same
    ``T - max_order`` response rows. The BIC log-likelihood is
    ``-1/2 tr[E Omega E'] + N/2 log|Omega|`` with df counting nonzero
    coefficients and nonzero below-diagonal precision entries. Ties keep the
    smaller order.
    """

    execution = execution or ExecutionConfig()
    values = np.asarray(series, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if max_order < 1:
        raise ParameterError(f"max_order must be positive, got {max_order}")
    if values.shape[0] <= max_order + 1:
        raise InsufficientDataError(f"need more than {max_order + 1} observations to compare orders")
    centered = values - values.mean(axis=0)
    best_order, best_score = 1, math.inf
    lower = np.tril_indices(values.shape[1], k=-1)
    for order in range(1, max_order + 1):
        panel = build_panel(centered[max_order - order :], order, center=False)
        fit = gaussian_lasso(panel, execution.params, config=execution.solver)
        residuals = panel.response - panel.design @ fit.coefficients
        loglik = -trace_term(residuals, fit.precision) + 0.5 * panel.n_obs * log_det(fit.precision)
        df = int(np.count_nonzero(fit.coefficients)) + int(np.count_nonzero(fit.precision[lower]))
        score = bic(loglik, df, panel.n_obs)
        logger.debug("Order %d: BIC=%.6g df=%d", order, score, df)
        if score < best_score:
            best_order, best_score = order, score
    return best_order


def _run_tasks(
    function: Callable[[T], R],
    tasks: Sequence[T],
    workers: int,
    on_result: Callable[[int, R], None] | None = None,
) -> list[R]:
    """Apply ``function`` to every task, inline or in a process pool, keeping task order."""

    results: list[R | None] = [None] * len(tasks)
    if workers <= 1 or len(tasks) <= 1:
        for index, task in enumerate(tasks):
            results[index] = function(task)
            if on_result is not None:
                on_result(index, results[index])  # type: ignore[arg-type]
        return results  # type: ignore[return-value]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(function, task): index for index, task in enumerate(tasks)}
        for future in as_completed(futures):
            index = futures[future]
            results[index] = future.result()
            if on_result is not None:
                on_result(index, results[index])  # type: ignore[arg-type]
    return results  # type: ignore[return-value]


@dataclass(frozen=True)
class _ReplicateTask:
    setting: float | str
    replicate: int
    config: SimStudyConfig
    execution: ExecutionConfig


@dataclass(frozen=True)
class _ReplicateResult:
    label: str
    replicate: int
    errors: dict[str, float]
    failures: dict[str, str]
    dof: float | None


def _run_replicate(task: _ReplicateTask) -> _ReplicateResult:
    config = task.config
    nu = nu_value(task.setting)
    seed = config.base_seed + task.replicate
    truth = dgp_model(config.dimension, config.order, nu)
    series = simulate_var(truth, config.length, burn_in=config.burn_in, seed=seed)
    panel = build_panel(series, config.order, center=True)
    errors: dict[str, float] = {}
    failures: dict[str, str] = {}
    dof: float | None = None
    for estimator in config.estimators:
        try:
            fitted = fit_estimator(panel, estimator, nu=nu, execution=task.execution)
        except _FIT_FAILURES as exc:
            failures[estimator] = f"{type(exc).__name__}: {exc}"
            continue
        errors[estimator] = mean_absolute_estimation_error(fitted.model, truth)
        if estimator == "tlasso_estimated":
            dof = fitted.dof
    return _ReplicateResult(nu_label(task.setting), task.replicate, errors, failures, dof)


@dataclass(frozen=True)
class _WindowTask:
    end_index: int
    end_date: Any
    series: np.ndarray
    actuals: dict[int, np.ndarray]
    labels: tuple[str, ...]
    export_network: bool
    config: RollingConfig
    execution: ExecutionConfig


@dataclass(frozen=True)
class _WindowResult:
    record: WindowRecord
    failures: dict[str, str]
    network: NetworkExport | None = None


def _horizon_label(horizon: int) -> str:
    return f"h={horizon}"


def _run_window(task: _WindowTask) -> _WindowResult:
    config = task.config
    try:
        order = select_order(task.series, config.max_order, execution=task.execution)
        panel = build_panel(task.series, order, center=True)
    except _FIT_FAILURES as exc:
        message = f"{type(exc).__name__}: {exc}"
        record = WindowRecord(end_index=task.end_index, end_date=task.end_date, error=message)
        return _WindowResult(record=record, failures={name: message for name in config.estimators})

    history = panel.history()
    longest = max(config.horizons)
    fitted: dict[str, FittedEstimator] = {}
    failures: dict[str, str] = {}
    mafe: dict[str, dict[str, float]] = {}
    for estimator in config.estimators:
        try:
            result = fit_estimator(panel, estimator, nu=config.fixed_nu, execution=task.execution)
            predictions = forecast(result.model, history, longest)
        except _FIT_FAILURES as exc:
            failures[estimator] = f"{type(exc).__name__}: {exc}"
            continue
        fitted[estimator] = result
        for horizon, actual in task.actuals.items():
            mafe.setdefault(_horizon_label(horizon), {})[estimator] = mean_absolute_forecast_error(
                predictions[horizon - 1], actual
            )

    nu_hat = fitted["tlasso_estimated"].dof if "tlasso_estimated" in fitted else None
    index: float | None = None
    network: NetworkExport | None = None
    source = next((name for name in _SPILLOVER_PREFERENCE if name in fitted), None)
    if source is not None:
        try:
            decomposition = gfevd(fitted[source].model, config.spillover_horizon)
            index = decomposition.index
            if task.export_network:
                network = extract_network(decomposition, config.retention_quantile, task.labels)
        except _FIT_FAILURES as exc:
            failures["spillover"] = f"{type(exc).__name__}: {exc}"

    error = "; ".join(f"{name}: {message}" for name, message in failures.items()) or None
    record = WindowRecord(
        end_index=task.end_index,
        end_date=task.end_date,
        order=order,
        nu_hat=nu_hat,
        spillover_index=index,
        mafe=mafe,
        error=error,
    )
    return _WindowResult(record=record, failures=failures, network=network)


def _mean_or_none(values: Iterable[float]) -> float | None:
    values = list(values)
    return float(np.mean(values)) if values else None


class BenchmarkService:
    """Runs experiments with a shared execution config and an optional progress observer."""

    def __init__(
        self,
        execution: ExecutionConfig | None = None,
        *,
        progress_callback: ProgressCallback | None = None,
    ) -> None:
        self.execution = execution or ExecutionConfig()
        self._progress_callback = progress_callback

    def _emit(self, event: ProgressEventType, **kwargs: Any) -> None:
        if self._progress_callback is None:
            return
        try:
            self._progress_callback(ProgressEvent(event=event, **kwargs))
        except Exception:
            logger.exception("Progress callback failed during %s", event)

    def fit(
        self,
        series: np.ndarray,
        order: int | None = None,
        estimator: EstimatorName = "tlasso_estimated",
        *,
        nu: float | None = None,
        max_order: int = 3,
    ) -> tuple[PanelMatrix, FittedEstimator]:
        """One-shot fit; the order is selected by BIC when not given."""

        if order is None:
            order = select_order(series, max_order, execution=self.execution)
            logger.info("Selected lag order %d", order)
        panel = build_panel(series, order, center=True)
        return panel, fit_estimator(panel, estimator, nu=nu, execution=self.execution)

    def run_simulation_study(self, config: SimStudyConfig) -> MetricReport:
        """MAEE of every estimator for every nu setting over ``config.replicates`` simulated panels."""

        tasks = [
            _ReplicateTask(setting, replicate, config, self.execution)
            for setting in config.nu_list
            for replicate in range(config.replicates)
        ]
        self._emit("study_start", completed=0, total=len(tasks), payload={"kind": "simulation"})
        done = 0

        def _progress(_: int, result: _ReplicateResult) -> None:
            nonlocal done
            done += 1
            self._emit(
                "replicate_end",
                completed=done,
                total=len(tasks),
                payload={"nu": result.label, "replicate": result.replicate, "failures": dict(result.failures)},
            )
            for estimator, message in result.failures.items():
                self._emit(
                    "failure", completed=done, total=len(tasks), payload={"estimator": estimator, "error": message}
                )

        results = _run_tasks(_run_replicate, tasks, self.execution.workers, _progress)

        labels = [nu_label(setting) for setting in config.nu_list]
        values: dict[str, dict[str, float | None]] = {}
        exclusions: dict[str, dict[str, int]] = {}
        dof_estimates: dict[str, list[float]] = {}
        for label in labels:
            subset = [result for result in results if result.label == label]
            values[label] = {
                estimator: _mean_or_none(r.errors[estimator] for r in subset if estimator in r.errors)
                for estimator in config.estimators
            }
            exclusions[label] = {
                estimator: sum(1 for r in subset if estimator in r.failures) for estimator in config.estimators
            }
            for estimator, count in exclusions[label].items():
                if count:
                    logger.warning("Excluded %d replicate(s) of %s at nu=%s", count, estimator, label)
            if "tlasso_estimated" in config.estimators:
                dof_estimates[label] = [r.dof for r in subset if r.dof is not None]

        report = MetricReport(
            metric="MAEE",
            estimators=list(config.estimators),
            settings=labels,
            values=values,
            exclusions=exclusions,
            dof_estimates=dof_estimates,
            config=config.model_dump(mode="json"),
            seed=config.base_seed,
        )
        self._emit("study_end", completed=len(tasks), total=len(tasks), payload={"kind": "simulation"})
        return report

    def run_rolling(self, panel: VolatilityPanel, config: RollingConfig) -> MetricReport:
        """Refit every window of length W ending at t = W..T and score its forecasts.

        MAFE at horizon h averages over windows whose target t + h lies in the
        sample. Only rows before the window end enter a window's fit.
        """

        length, window = panel.length, config.window
        if window >= length:
            raise InsufficientDataError(f"window {window} must be shorter than the panel ({length} rows)")
        if length < window + max(config.horizons):
            raise InsufficientDataError(
                f"panel of {length} rows is too short for window {window} and horizon {max(config.horizons)}"
            )
        requested = set(config.network_dates)
        tasks = []
        for end in range(window, length + 1):
            actuals = {
                horizon: panel.log_vol[end - 1 + horizon]
                for horizon in config.horizons
                if end + horizon <= length
            }
            end_date = panel.dates[end - 1]
            tasks.append(
                _WindowTask(
                    end_index=end,
                    end_date=end_date,
                    series=panel.log_vol[end - window : end],
                    actuals=actuals,
                    labels=panel.labels,
                    export_network=end_date in requested,
                    config=config,
                    execution=self.execution,
                )
            )
        self._emit("study_start", completed=0, total=len(tasks), payload={"kind": "rolling"})
        done = 0

        def _progress(_: int, result: _WindowResult) -> None:
            nonlocal done
            done += 1
            self._emit(
                "window_end",
                completed=done,
                total=len(tasks),
                payload={"end_date": str(result.record.end_date), "nu_hat": result.record.nu_hat},
            )
            if result.failures:
                logger.warning("Window ending %s: %s", result.record.end_date, result.record.error)
                self._emit("failure", completed=done, total=len(tasks), payload=dict(result.failures))

        results = _run_tasks(_run_window, tasks, self.execution.workers, _progress)

        settings = [_horizon_label(horizon) for horizon in config.horizons]
        values: dict[str, dict[str, float | None]] = {}
        exclusions: dict[str, dict[str, int]] = {}
        for horizon, label in zip(config.horizons, settings):
            eligible = [r for r, task in zip(results, tasks) if horizon in task.actuals]
            values[label] = {
                estimator: _mean_or_none(
                    r.record.mafe[label][estimator]
                    for r in eligible
                    if estimator in r.record.mafe.get(label, {})
                )
                for estimator in config.estimators
            }
            exclusions[label] = {
                estimator: sum(1 for r in eligible if estimator not in r.record.mafe.get(label, {}))
                for estimator in config.estimators
            }
        networks = {
            result.record.end_date.isoformat(): result.network
            for result in results
            if result.network is not None
        }
        missing = requested - {result.record.end_date for result in results}
        if missing:
            logger.warning("No window ends on %s", ", ".join(sorted(str(d) for d in missing)))

        report = MetricReport(
            metric="MAFE",
            estimators=list(config.estimators),
            settings=settings,
            values=values,
            exclusions=exclusions,
            windows=[result.record for result in results],
            networks=networks,
            config=config.model_dump(mode="json"),
        )
        self._emit("study_end", completed=len(tasks), total=len(tasks), payload={"kind": "rolling"})
        return report


def run_simulation_study(
    config: SimStudyConfig,
    execution: ExecutionConfig | None = None,
    *,
    progress_callback: ProgressCallback | None = None,
) -> MetricReport:
    return BenchmarkService(execution, progress_callback=progress_callback).run_simulation_study(config)


def run_rolling(
    panel: VolatilityPanel,
    config: RollingConfig,
    execution: ExecutionConfig | None = None,
    *,
    progress_callback: ProgressCallback | None = None,
) -> MetricReport:
    return BenchmarkService(execution, progress_callback=progress_callback).run_rolling(panel, config)
