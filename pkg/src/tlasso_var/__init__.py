"""Penalized VAR estimation with multivariate Student-t errors."""

__version__ = "0.1.0"

from .errors import DataError, NumericalError, TlassoVarError
from .gaussian import GaussianFit, SolverConfig, gaussian_lasso, ls_estimate
from .models import MetricReport, NetworkExport, RegularizationParams, RollingConfig, SimStudyConfig
from .report_exporter import ReportExporter, emit_reports
from .service import BenchmarkService, ExecutionConfig, ProgressCallback, ProgressEvent
from .spillover import SpilloverResult, extract_network, gfevd
from .tlasso import TlassoFit, ecm_estimate, em_fixed_nu
from .var import ErrorDistribution, PanelMatrix, VarModel, build_panel, forecast, simulate_var
from .volatility import VolatilityPanel, build_volatility_panel, ingest_csv

__all__ = [
    "BenchmarkService",
    "DataError",
    "ErrorDistribution",
    "ExecutionConfig",
    "GaussianFit",
    "MetricReport",
    "NetworkExport",
    "NumericalError",
    "PanelMatrix",
    "ProgressCallback",
    "ProgressEvent",
    "RegularizationParams",
    "ReportExporter",
    "RollingConfig",
    "SimStudyConfig",
    "SolverConfig",
    "SpilloverResult",
    "TlassoFit",
    "TlassoVarError",
    "VarModel",
    "VolatilityPanel",
    "build_panel",
    "build_volatility_panel",
    "ecm_estimate",
    "em_fixed_nu",
    "emit_reports",
    "extract_network",
    "forecast",
    "gaussian_lasso",
    "gfevd",
    "ingest_csv",
    "ls_estimate",
    "simulate_var",
    "__version__",
]
