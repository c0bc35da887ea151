"""Tail-risk forecasting from intraday data.

Pipeline: realized measures -> common risk factor -> joint VaR/ES
recursions estimated by quasi-likelihood -> rolling forecasts ->
backtests, scoring rules and model-confidence-set comparison.
"""

from ._core import BACKEND
from .estimate import FitConfig, RollingPolicy, fit, rolling_forecast
from .ingest import align, daily_returns_from_closes, load_intraday_csv
from .model import ModelParams, filter_path, forecast_one_step
from .realized import build_panel

__version__ = "0.1.0"
__all__ = [
    "BACKEND", "__version__", "FitConfig", "ModelParams", "RollingPolicy",
    "align", "build_panel", "daily_returns_from_closes", "filter_path", "fit",
    "forecast_one_step", "load_intraday_csv", "rolling_forecast",
]
