"""Grouped functional time series: smoothing, functional PCA, ARIMA score
forecasting, hierarchy reconciliation, and bootstrap prediction intervals."""

__version__ = "0.1.0"

from .domain import (
    AgeGrid,
    FunctionalSeries,
    GroupedDataset,
    GroupingScheme,
    SeriesKey,
    aggregate,
    derived_rates,
    level_label,
)
from .errors import GftsError, NumericalError, ValidationError
from .ingest import load_grouping_config, load_panel, write_grouping_config, write_panel
from .smoothing import SmoothingConfig, smooth_curve, smooth_dataset, smooth_series
from .fpca import FpcModel, fit_fpca, forecast_curves
from .arima import ArimaModel, auto_arima, fit_arima, forecast, select_d
from .reconcile import (
    BaseForecasts,
    SummingMatrix,
    bottom_up,
    build_summing_matrix,
    forecast_summing_matrices,
    forecast_summing_matrix,
    optimal_combination,
    reconcile_curves,
)
from .intervals import IntervalForecast, forecast_intervals
from .depth import DepthRanking, fm_depth, moving_median_forecast
from .simulate import SimConfig, SimulationResult, generate, generate_with_truth
from .evaluate import (
    BacktestPlan,
    BacktestReport,
    interval_score,
    mafe,
    mean_interval_score,
    rmsfe,
    run_backtest,
    summarize,
    write_report_csv,
    write_report_markdown,
)

__all__ = [
    "__version__",
    "AgeGrid",
    "FunctionalSeries",
    "GroupedDataset",
    "GroupingScheme",
    "SeriesKey",
    "aggregate",
    "derived_rates",
    "level_label",
    "GftsError",
    "NumericalError",
    "ValidationError",
    "load_grouping_config",
    "load_panel",
    "write_grouping_config",
    "write_panel",
    "SmoothingConfig",
    "smooth_curve",
    "smooth_dataset",
    "smooth_series",
    "FpcModel",
    "fit_fpca",
    "forecast_curves",
    "ArimaModel",
    "auto_arima",
    "fit_arima",
    "forecast",
    "select_d",
    "BaseForecasts",
    "SummingMatrix",
    "bottom_up",
    "build_summing_matrix",
    "forecast_summing_matrices",
    "forecast_summing_matrix",
    "optimal_combination",
    "reconcile_curves",
    "IntervalForecast",
    "forecast_intervals",
    "DepthRanking",
    "fm_depth",
    "moving_median_forecast",
    "SimConfig",
    "SimulationResult",
    "generate",
    "generate_with_truth",
    "BacktestPlan",
    "BacktestReport",
    "interval_score",
    "mafe",
    "mean_interval_score",
    "rmsfe",
    "run_backtest",
    "summarize",
    "write_report_csv",
    "write_report_markdown",
]
