"""Command-line entry point exposed via `tlasso-var`.

Available Commands:
    simulate: Monte Carlo study of coefficient recovery (MAEE per nu and estimator)
    volatility: OHLC CSV -> log range-volatility panel CSV
    fit: One-shot estimation on a panel, printing sparsity, Omega and nu
    spillover: Fit, decompose and export the spillover network of one window
    rolling: Rolling-window forecasting and spillover pipeline

Experiment commands accept ``--config FILE`` with a JSON object of
configuration fields; flags given on the command line override it. Exit codes
are 0 on success, 1 for unusable input and 2 for numerical failures.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from collections.abc import Iterator
from contextlib import contextmanager
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Annotated, Any

import numpy as np
import typer
from rich.console import Console, Group
from rich.live import Live
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table
from rich.text import Text

from .errors import DataError, NumericalError
from .models import MetricReport, RegularizationParams, RollingConfig, SimStudyConfig
from .report_exporter import emit_reports
from .service import BenchmarkService, ExecutionConfig, FittedEstimator, ProgressEvent
from .spillover import directional_spillovers, extract_network, gfevd
from .volatility import CsvSchema, build_volatility_panel, ingest_csv, read_panel_csv, write_panel_csv

app = typer.Typer(help="Penalized VAR estimation with Student-t errors, spillovers and range volatility.")
console = Console()
error_console = Console(stderr=True)


class Estimator(str, Enum):
    ls = "ls"
    gaussian_lasso = "gaussian_lasso"
    tlasso_fixed = "tlasso_fixed"
    tlasso_estimated = "tlasso_estimated"


class OutputFormat(str, Enum):
    table = "table"
    json = "json"


class Layout(str, Enum):
    long = "long"
    wide = "wide"


class NuCorrectionChoice(str, Enum):
    per_observation = "per_observation"
    averaged = "averaged"


@app.callback()
def main(
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Log debug messages.")] = False,
) -> None:
    """Configure logging for every command."""

    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=error_console, show_path=False, rich_tracebacks=True)],
        force=True,
    )


@contextmanager
def _exit_on_failure() -> Iterator[None]:
    """Map data problems to exit code 1 and numerical failures to exit code 2."""

    try:
        yield
    except typer.Exit:
        raise
    except FileNotFoundError as exc:
        typer.secho(str(exc), fg=typer.colors.RED)
        raise typer.Exit(code=1) from exc
    except (DataError, ValueError) as exc:
        typer.secho(f"Invalid input: {exc}", fg=typer.colors.RED)
        raise typer.Exit(code=1) from exc
    except NumericalError as exc:
        typer.secho(f"Numerical failure: {exc}", fg=typer.colors.RED)
        raise typer.Exit(code=2) from exc
    except Exception as exc:  # pragma: no cover
        typer.secho(f"Run failed: {exc}", fg=typer.colors.RED)
        raise typer.Exit(code=2) from exc


def _load_config(path: Path | None) -> dict[str, Any]:
    if path is None:
        return {}
    if not path.exists():
        raise FileNotFoundError(f"No config file found at {path}")
    loaded = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(loaded, dict):
        raise ValueError(f"{path} must contain a JSON object")
    return loaded


def _merge(base: dict[str, Any], **flags: Any) -> dict[str, Any]:
    """Overlay the flags that were given (not None, not empty) on the file values."""

    merged = dict(base)
    for key, value in flags.items():
        if value is None or (isinstance(value, (list, tuple)) and not value):
            continue
        merged[key] = value
    return merged


def _execution(
    workers: int | None,
    lambda_: float | None,
    gamma: float | None,
    nu_correction: NuCorrectionChoice = NuCorrectionChoice.per_observation,
) -> ExecutionConfig:
    execution = ExecutionConfig(nu_correction=nu_correction.value)
    if workers is not None:
        execution.workers = workers
    if lambda_ is not None or gamma is not None:
        execution.params = RegularizationParams(lambda_=lambda_, gamma=gamma)
    return execution


def _run_with_progress(title: str, run: Any) -> MetricReport:
    renderer = _ProgressRenderer(console, title=title)
    try:
        with Live(renderer.render(), console=console, refresh_per_second=4) as live:
            renderer.set_live(live)
            return run(renderer)
    finally:
        renderer.set_live(None)


ConfigOption = Annotated[
    Path | None,
    typer.Option("--config", help="JSON file with configuration fields; flags override it.", dir_okay=False),
]
WorkersOption = Annotated[
    int | None, typer.Option("--workers", min=1, help="Worker processes (default: $TLASSO_VAR_WORKERS or 1).")
]
LambdaOption = Annotated[
    float | None, typer.Option("--lambda", min=0.0, help="Fix the coefficient penalty instead of BIC search.")
]
GammaOption = Annotated[
    float | None, typer.Option("--gamma", min=0.0, help="Fix the precision penalty instead of BIC search.")
]
OutputOption = Annotated[OutputFormat, typer.Option(help="Choose JSON for raw output.")]
OrderOption = Annotated[int | None, typer.Option("--order", "-P", min=1, help="Lag order (BIC-selected if omitted).")]
NuCorrectionOption = Annotated[
    NuCorrectionChoice,
    typer.Option("--nu-correction", help="Correction term of the nu equation used by tlasso_estimated."),
]


@app.command()
def simulate(
    config: ConfigOption = None,
    dimension: Annotated[int | None, typer.Option("--dimension", "-J", help="Number of series J.")] = None,
    length: Annotated[int | None, typer.Option("--length", "-T", help="Sample length T.")] = None,
    order: Annotated[int | None, typer.Option("--order", "-P", help="Lag order P of the DGP.")] = None,
    nu: Annotated[
        list[str] | None, typer.Option("--nu", help="Degrees of freedom; repeat, 'inf' for Gaussian.")
    ] = None,
    replicates: Annotated[int | None, typer.Option("--replicates", "-S", help="Replicates per nu.")] = None,
    estimator: Annotated[
        list[str] | None, typer.Option("--estimator", help="Estimator to compare; repeatable.")
    ] = None,
    seed: Annotated[int | None, typer.Option("--seed", help="Base seed; replicate s uses seed + s.")] = None,
    workers: WorkersOption = None,
    lambda_: LambdaOption = None,
    gamma: GammaOption = None,
    nu_correction: NuCorrectionOption = NuCorrectionChoice.per_observation,
    out: Annotated[Path, typer.Option("--out", help="Directory for CSV/JSON outputs.", file_okay=False)] = Path(
        "results/simulation"
    ),
    output: OutputOption = OutputFormat.table,
) -> None:
    """Run the simulation study and write the MAEE table and nu-hat histogram.

    Examples:
        $ tlasso-var simulate --replicates 10 --nu 1 --nu 3 --nu inf --out results/sim
        $ tlasso-var simulate --config study.json --workers 8
    """

    with _exit_on_failure():
        settings = _merge(
            _load_config(config),
            dimension=dimension,
            length=length,
            order=order,
            nu_list=nu,
            replicates=replicates,
            estimators=estimator,
            base_seed=seed,
        )
        study = SimStudyConfig.model_validate(settings)
        execution = _execution(workers, lambda_, gamma, nu_correction)
        report = _run_with_progress(
            "Simulation study",
            lambda renderer: BenchmarkService(execution, progress_callback=renderer).run_simulation_study(study),
        )
        paths = emit_reports(report, out)

    _finish(report, paths, output)


@app.command()
def volatility(
    file: Annotated[Path, typer.Argument(help="OHLC CSV file.", dir_okay=False)],
    output_path: Annotated[Path, typer.Option("--output", "-o", help="Panel CSV to write.", dir_okay=False)] = Path(
        "log_vol.csv"
    ),
    schema: Annotated[Layout, typer.Option("--schema", help="Input layout.")] = Layout.long,
    floor: Annotated[float, typer.Option(min=0.0, help="Variance floor applied before the log.")] = 1e-12,
    strict: Annotated[bool, typer.Option(help="Fail on dates missing for some series (else drop them).")] = True,
    date_format: Annotated[str | None, typer.Option(help="strftime format of the date column.")] = None,
) -> None:
    """Convert open/high/low prices into the log Parkinson-variance panel."""

    with _exit_on_failure():
        table = ingest_csv(file, CsvSchema(layout=schema.value, date_format=date_format))
        panel = build_volatility_panel(table, floor=floor, strict=strict)
        write_panel_csv(panel, output_path)

    summary = Table(show_header=False, box=None)
    summary.add_row("Series", ", ".join(panel.labels))
    summary.add_row("Observations", str(panel.length))
    summary.add_row("Dates", f"{panel.dates[0]} .. {panel.dates[-1]}")
    console.print(Panel(summary, title="Log range-volatility panel", expand=False))
    typer.secho(f"Saved panel -> {output_path}", fg=typer.colors.GREEN)


def _window_slice(
    panel_file: Path, window: int | None, end_date: date | None
) -> tuple[np.ndarray, tuple[str, ...], date]:
    panel = read_panel_csv(panel_file)
    end = panel.length
    if end_date is not None:
        if end_date not in panel.dates:
            raise DataError(f"{end_date} is not a date of the panel")
        end = panel.dates.index(end_date) + 1
    start = 0 if window is None else end - window
    if start < 0:
        raise DataError(f"window of {window} rows does not fit before {panel.dates[end - 1]}")
    return panel.log_vol[start:end], panel.labels, panel.dates[end - 1]


@app.command()
def fit(
    panel_file: Annotated[Path, typer.Argument(help="Panel CSV written by `volatility`.", dir_okay=False)],
    estimator: Annotated[Estimator, typer.Option(help="Estimator to fit.")] = Estimator.tlasso_estimated,
    order: OrderOption = None,
    max_order: Annotated[int, typer.Option(min=1, help="Largest order tried by BIC.")] = 3,
    nu: Annotated[float | None, typer.Option(min=0.0, help="Degrees of freedom for tlasso_fixed.")] = None,
    window: Annotated[int | None, typer.Option(min=3, help="Use only the last W rows.")] = None,
    lambda_: LambdaOption = None,
    gamma: GammaOption = None,
    nu_correction: NuCorrectionOption = NuCorrectionChoice.per_observation,
    output: OutputOption = OutputFormat.table,
) -> None:
    """Estimate one VAR and print coefficient sparsity, the precision matrix and nu."""

    with _exit_on_failure():
        series, labels, _ = _window_slice(panel_file, window, None)
        service = BenchmarkService(_execution(None, lambda_, gamma, nu_correction))
        panel, fitted = service.fit(series, order, estimator.value, nu=nu, max_order=max_order)

    precision = fitted.model.error.inverse_scale
    if output is OutputFormat.json:
        typer.echo(json.dumps(_fit_payload(fitted, precision, labels), indent=2))
        return
    _render_fit(fitted, precision, labels, panel.n_obs)


@app.command()
def spillover(
    panel_file: Annotated[Path, typer.Argument(help="Panel CSV written by `volatility`.", dir_okay=False)],
    estimator: Annotated[Estimator, typer.Option(help="Estimator to fit.")] = Estimator.tlasso_estimated,
    order: OrderOption = None,
    max_order: Annotated[int, typer.Option(min=1)] = 3,
    nu: Annotated[float | None, typer.Option(min=0.0, help="Degrees of freedom for tlasso_fixed.")] = None,
    window: Annotated[int | None, typer.Option(min=3, help="Use only the last W rows before --end-date.")] = None,
    end_date: Annotated[str | None, typer.Option(help="Window end date (YYYY-MM-DD); default last date.")] = None,
    horizon: Annotated[int, typer.Option(min=1, help="Forecast horizon h.")] = 5,
    quantile: Annotated[float, typer.Option(min=0.0, max=1.0, help="Share of spillovers kept as edges.")] = 0.15,
    lambda_: LambdaOption = None,
    gamma: GammaOption = None,
    nu_correction: NuCorrectionOption = NuCorrectionChoice.per_observation,
    out: Annotated[Path, typer.Option("--out", file_okay=False, help="Directory for network JSON/DOT.")] = Path(
        "results/spillover"
    ),
    output: OutputOption = OutputFormat.table,
) -> None:
    """Fit one window, decompose its forecast-error variance and export the spillover network."""

    with _exit_on_failure():
        parsed_end = date.fromisoformat(end_date) if end_date else None
        series, labels, last = _window_slice(panel_file, window, parsed_end)
        service = BenchmarkService(_execution(None, lambda_, gamma, nu_correction))
        _, fitted = service.fit(series, order, estimator.value, nu=nu, max_order=max_order)
        result = gfevd(fitted.model, horizon)
        network = extract_network(result, quantile, labels)
        out.mkdir(parents=True, exist_ok=True)
        json_path = out / f"network_{last.isoformat()}.json"
        dot_path = out / f"network_{last.isoformat()}.dot"
        json_path.write_text(network.to_json() + "\n", encoding="utf-8")
        dot_path.write_text(network.to_dot(), encoding="utf-8")

    if output is OutputFormat.json:
        typer.echo(network.model_dump_json(indent=2))
        return
    totals = directional_spillovers(result)
    table = Table(title=f"Spillovers at h={horizon} ending {last} (index {result.index:.2f})", show_lines=False)
    table.add_column("Series", style="cyan")
    table.add_column("From others", justify="right")
    table.add_column("To others", justify="right")
    table.add_column("Net", justify="right")
    for label, received, sent, net in zip(labels, totals.from_others, totals.to_others, totals.net):
        table.add_row(label, f"{received:.2f}", f"{sent:.2f}", f"{net:+.2f}")
    console.print(table)
    if result.non_stationary:
        typer.secho("Warning: the fitted VAR is not stationary.", fg=typer.colors.YELLOW)
    typer.secho(f"Saved network ({len(network.edges)} edges) -> {json_path}, {dot_path}", fg=typer.colors.GREEN)


@app.command()
def rolling(
    panel_file: Annotated[Path, typer.Argument(help="Panel CSV written by `volatility`.", dir_okay=False)],
    config: ConfigOption = None,
    window: Annotated[int | None, typer.Option("--window", "-W", help="Window length in rows.")] = None,
    horizon: Annotated[list[int] | None, typer.Option("--horizon", help="Forecast horizon; repeatable.")] = None,
    max_order: Annotated[int | None, typer.Option(help="Largest lag order tried by BIC.")] = None,
    estimator: Annotated[list[str] | None, typer.Option("--estimator", help="Estimator; repeatable.")] = None,
    fixed_nu: Annotated[float | None, typer.Option(help="Degrees of freedom for tlasso_fixed.")] = None,
    spillover_horizon: Annotated[int | None, typer.Option(help="Horizon of the spillover index.")] = None,
    quantile: Annotated[float | None, typer.Option(help="Share of spillovers kept in networks.")] = None,
    network_date: Annotated[
        list[str] | None, typer.Option("--network-date", help="Export a network; repeatable.")
    ] = None,
    workers: WorkersOption = None,
    lambda_: LambdaOption = None,
    gamma: GammaOption = None,
    nu_correction: NuCorrectionOption = NuCorrectionChoice.per_observation,
    out: Annotated[Path, typer.Option("--out", file_okay=False, help="Directory for outputs.")] = Path(
        "results/rolling"
    ),
    output: OutputOption = OutputFormat.table,
) -> None:
    """Run the rolling-window pipeline: order selection, forecasts, MAFE and spillover index per window."""

    with _exit_on_failure():
        settings = _merge(
            _load_config(config),
            window=window,
            horizons=horizon,
            max_order=max_order,
            estimators=estimator,
            fixed_nu=fixed_nu,
            spillover_horizon=spillover_horizon,
            retention_quantile=quantile,
            network_dates=network_date,
        )
        rolling_config = RollingConfig.model_validate(settings)
        panel = read_panel_csv(panel_file)
        execution = _execution(workers, lambda_, gamma, nu_correction)
        report = _run_with_progress(
            "Rolling windows",
            lambda renderer: BenchmarkService(execution, progress_callback=renderer).run_rolling(panel, rolling_config),
        )
        paths = emit_reports(report, out)

    _finish(report, paths, output)


def _finish(report: MetricReport, paths: list[Path], output: OutputFormat) -> None:
    if output is OutputFormat.json:
        typer.echo(report.model_dump_json(indent=2))
        return
    _render_report(report)
    formatted = "\n".join(str(path) for path in paths)
    typer.secho(f"Saved outputs:\n{formatted}", fg=typer.colors.GREEN)


class _ProgressRenderer:
    """Render experiment progress using Rich live components."""

    def __init__(self, console: Console, title: str, max_events: int = 8) -> None:
        self.console = console
        self.title = title
        self._events: deque[Text] = deque(maxlen=max_events)
        self._completed = 0
        self._total: int | None = None
        self._live: Live | None = None

    def set_live(self, live: Live | None) -> None:
        self._live = live
        if live is not None:
            live.update(self.render())

    def __call__(self, event: ProgressEvent) -> None:
        if event.completed is not None:
            self._completed = event.completed
        if event.total is not None:
            self._total = event.total
        rendered = self._format_event(event)
        if rendered is not None:
            self._events.appendleft(rendered)
        if self._live is not None:
            self._live.update(self.render())

    def render(self) -> Panel:
        body = Table.grid(padding=(0, 1))
        body.add_column()
        if self._events:
            for line in self._events:
                body.add_row(line)
        else:
            body.add_row(Text("Waiting for the first task...", style="dim"))
        total = "?" if self._total is None else str(self._total)
        header = Text(f"Completed {self._completed}/{total}", style="bold cyan")
        return Panel(Group(header, body), title=self.title, border_style="cyan", padding=(1, 1))

    def _format_event(self, event: ProgressEvent) -> Text | None:
        payload = event.payload or {}
        if event.event == "study_start":
            return Text(f"Started {event.total} tasks", style="white")
        if event.event == "replicate_end":
            return Text(f"nu={payload.get('nu')} replicate {payload.get('replicate')} done", style="green")
        if event.event == "window_end":
            nu_hat = payload.get("nu_hat")
            detail = f" (nu_hat={nu_hat:.3g})" if isinstance(nu_hat, float) else ""
            return Text(f"Window ending {payload.get('end_date')} done{detail}", style="green")
        if event.event == "failure":
            return Text(f"Failure: {_truncate(json.dumps(payload, default=str))}", style="red")
        if event.event == "study_end":
            return Text("All tasks finished", style="bold green")
        return None


def _truncate(text: str, width: int = 80) -> str:
    display = text.strip()
    if len(display) > width:
        return display[: width - 1] + "…"
    return display


def _format_value(value: float | None) -> str:
    return "-" if value is None else f"{value:.4f}"


def _render_report(report: MetricReport) -> None:
    """Print the metric table (rows nu or horizon, columns estimators) and any exclusions."""

    setting_name = "nu" if report.metric == "MAEE" else "horizon"
    table = Table(title=report.metric, show_lines=False)
    table.add_column(setting_name, style="cyan", no_wrap=True)
    for estimator in report.estimators:
        table.add_column(estimator, justify="right")
    for setting in report.settings:
        row = report.values.get(setting, {})
        table.add_row(setting, *(_format_value(row.get(estimator)) for estimator in report.estimators))
    console.print(table)

    excluded = {
        setting: {name: count for name, count in counts.items() if count}
        for setting, counts in report.exclusions.items()
    }
    excluded = {setting: counts for setting, counts in excluded.items() if counts}
    if excluded:
        lines = [f"{setting}: {counts}" for setting, counts in excluded.items()]
        console.print(Panel("\n".join(lines), title="Excluded fits", border_style="yellow"))
    for setting, estimates in report.dof_estimates.items():
        if estimates:
            console.print(f"mean nu_hat at nu={setting}: {float(np.mean(estimates)):.3f} ({len(estimates)} fits)")


def _fit_payload(fitted: FittedEstimator, precision: np.ndarray, labels: tuple[str, ...]) -> dict[str, Any]:
    model = fitted.model
    return {
        "estimator": fitted.estimator,
        "labels": list(labels),
        "order": model.order,
        "dof": fitted.dof,
        "converged": fitted.converged,
        "lambda": fitted.chosen[0],
        "gamma": fitted.chosen[1],
        "coefficients": [matrix.tolist() for matrix in model.coefficients],
        "precision": precision.tolist(),
        "spectral_radius": model.spectral_radius(),
    }


def _render_fit(fitted: FittedEstimator, precision: np.ndarray, labels: tuple[str, ...], n_obs: int) -> None:
    model = fitted.model
    header = Table(show_header=False, box=None)
    header.add_row("Estimator", fitted.estimator)
    header.add_row("Observations", str(n_obs))
    header.add_row("Order", str(model.order))
    header.add_row("Penalties", f"lambda={fitted.chosen[0]:.4g} gamma={fitted.chosen[1]:.4g}")
    if fitted.dof is not None:
        header.add_row("Degrees of freedom", f"{fitted.dof:.4g}")
    header.add_row("Spectral radius", f"{model.spectral_radius():.4f}")
    if not fitted.converged:
        header.add_row("Converged", "no")
    console.print(Panel(header, title="Fit summary", expand=False))

    sparsity = Table(title="Coefficient sparsity")
    sparsity.add_column("Lag", style="cyan")
    sparsity.add_column("Nonzero", justify="right")
    sparsity.add_column("Share", justify="right")
    for lag, matrix in enumerate(model.coefficients, start=1):
        nonzero = int(np.count_nonzero(matrix))
        sparsity.add_row(str(lag), f"{nonzero}/{matrix.size}", f"{nonzero / matrix.size:.1%}")
    console.print(sparsity)

    omega = Table(title="Precision matrix")
    omega.add_column("", style="cyan")
    for label in labels:
        omega.add_column(label, justify="right")
    for label, row in zip(labels, precision):
        omega.add_row(label, *(f"{value:.3g}" for value in row))
    console.print(omega)


if __name__ == "__main__":  # pragma: no cover
    app()
