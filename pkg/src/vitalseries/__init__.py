"""Boundary-consistent district count series: areal interpolation,
trend-aware changepoint audit, and functional clustering of rate curves."""

from .series import CountSeries
from .trend_model import TrendPoissonFit, fit_null, fit_change, fit_level_trend_change
from .changepoint import (
    ChangepointScan,
    RankedReport,
    calibrate_threshold,
    rank,
    scan,
    scan_trend_or_level,
)
from .simulate import ScenarioConfig, StudyResult, generate, run_study, run_table

__version__ = "0.1.0"

__all__ = [
    "CountSeries",
    "TrendPoissonFit",
    "fit_null",
    "fit_change",
    "fit_level_trend_change",
    "ChangepointScan",
    "RankedReport",
    "calibrate_threshold",
    "rank",
    "scan",
    "scan_trend_or_level",
    "ScenarioConfig",
    "StudyResult",
    "generate",
    "run_study",
    "run_table",
    "__version__",
]
