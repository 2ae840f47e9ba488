"""Utilities for exporting experiment reports to CSV, JSON and DOT files."""

from __future__ import annotations

import csv
import json
from io import StringIO
from pathlib import Path

import numpy as np

from . import __version__
from .models import MetricReport

# Bin edges of the exported degrees-of-freedom histogram; the last bin is closed.
DOF_HISTOGRAM_EDGES = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 7.5, 10.0, 15.0, 20.0, 50.0, 100.0, 1000.0)


def _cell(value: float | int | str | None) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ReportExporter:
    """Serialize :class:`MetricReport` into the files consumed by plotting and testing tools."""

    def __init__(self, report: MetricReport) -> None:
        self.report = report

    @property
    def setting_column(self) -> str:
        return "nu" if self.report.metric == "MAEE" else "horizon"

    def to_metadata(self) -> str:
        """Config, seed and package version as JSON; no timestamps so reruns are byte-identical."""

        payload = {
            "metric": self.report.metric,
            "estimators": self.report.estimators,
            "settings": self.report.settings,
            "config": self.report.config,
            "seed": self.report.seed,
            "package_version": __version__,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def _table(self, rows: dict[str, dict[str, float | int | None]]) -> str:
        buffer = StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow([self.setting_column, *self.report.estimators])
        for setting in self.report.settings:
            row = rows.get(setting, {})
            writer.writerow([setting, *(_cell(row.get(estimator)) for estimator in self.report.estimators)])
        return buffer.getvalue()

    def to_metric_csv(self) -> str:
        """One row per nu (or horizon), one column per estimator."""

        return self._table(self.report.values)

    def to_exclusions_csv(self) -> str:
        return self._table(self.report.exclusions)

    def to_dof_csv(self) -> str:
        buffer = StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["nu", "replicate", "nu_hat"])
        for setting, estimates in self.report.dof_estimates.items():
            for replicate, estimate in enumerate(estimates):
                writer.writerow([setting, replicate, _cell(float(estimate))])
        return buffer.getvalue()

    def to_dof_histogram_csv(self) -> str:
        """Bin counts of the estimated degrees of freedom per true nu."""

        buffer = StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["nu", "bin_lower", "bin_upper", "count"])
        edges = np.asarray(DOF_HISTOGRAM_EDGES)
        for setting, estimates in self.report.dof_estimates.items():
            counts, _ = np.histogram(np.clip(estimates, edges[0], edges[-1]), bins=edges)
            for lower, upper, count in zip(edges[:-1], edges[1:], counts):
                writer.writerow([setting, _cell(float(lower)), _cell(float(upper)), int(count)])
        return buffer.getvalue()

    def to_windows_csv(self) -> str:
        """One row per window end date with order, nu_hat, spillover index and MAFE_t per estimator."""

        buffer = StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        mafe_columns = [
            (setting, estimator) for setting in self.report.settings for estimator in self.report.estimators
        ]
        writer.writerow(
            [
                "end_index",
                "end_date",
                "order",
                "nu_hat",
                "spillover_index",
                *(f"mafe_{setting.replace('=', '')}_{estimator}" for setting, estimator in mafe_columns),
                "error",
            ]
        )
        for window in self.report.windows:
            writer.writerow(
                [
                    window.end_index,
                    window.end_date.isoformat() if window.end_date else "",
                    _cell(window.order),
                    _cell(window.nu_hat),
                    _cell(window.spillover_index),
                    *(_cell(window.mafe.get(setting, {}).get(estimator)) for setting, estimator in mafe_columns),
                    window.error or "",
                ]
            )
        return buffer.getvalue()

    def write_all(self, out_dir: Path) -> list[Path]:
        """Write every file the report has content for and return the paths, metadata first."""

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = [_write(out_dir / "metadata.json", self.to_metadata())]
        report = self.report
        if report.values:
            stem = report.metric.lower()
            written.append(_write(out_dir / f"{stem}.csv", self.to_metric_csv()))
            written.append(_write(out_dir / f"{stem}_exclusions.csv", self.to_exclusions_csv()))
        if any(report.dof_estimates.values()):
            written.append(_write(out_dir / "nu_hat.csv", self.to_dof_csv()))
            written.append(_write(out_dir / "nu_hat_histogram.csv", self.to_dof_histogram_csv()))
        if report.windows:
            written.append(_write(out_dir / "windows.csv", self.to_windows_csv()))
        for key, network in sorted(report.networks.items()):
            written.append(_write(out_dir / "networks" / f"network_{key}.json", network.to_json() + "\n"))
            written.append(_write(out_dir / "networks" / f"network_{key}.dot", network.to_dot()))
        return written


def _write(path: Path, content: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content, encoding="utf-8")
    return path


def emit_reports(report: MetricReport, out_dir: Path) -> list[Path]:
    """Write ``report`` into ``out_dir``; an empty report yields ``metadata.json`` only."""

    return ReportExporter(report).write_all(out_dir)
