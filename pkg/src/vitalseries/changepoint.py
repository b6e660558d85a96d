"""Single abrupt-change scans over count series, ranking and calibration.

The evidence for a change at a candidate year is twice the gap between
the maximized log-likelihood of the shifted model and that of the
no-change model.  Series are ranked by their maximal statistic; decision
thresholds, when wanted, come from simulation of a no-change generator,
never from an asymptotic distribution.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import trend_model
from .errors import DegenerateSeries, InvalidTau
from .series import CountSeries
from .trend_model import TrendPoissonFit

logger = logging.getLogger(__name__)

DEFAULT_MIN_SEG = 5


@dataclass(frozen=True)
class ChangepointScan:
    """Statistic curve over admissible change years for one series."""

    district_id: str
    tau_grid: np.ndarray
    statistics: np.ndarray
    tau_hat: int | None
    t_max: float
    null_fit: TrendPoissonFit
    best_change_fit: TrendPoissonFit | None


@dataclass(frozen=True)
class RankedEntry:
    district_id: str
    tau_hat: int | None
    t_max: float
    nearest_known_change: int | None = None
    distance_to_known_change: int | None = None


@dataclass(frozen=True)
class RankedReport:
    """Scan summaries ordered by strength of evidence (descending)."""

    entries: tuple[RankedEntry, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def admissible_taus(series: CountSeries, min_seg: int) -> np.ndarray:
    """Usable years leaving at least ``min_seg`` usable points per side."""
    y = series.used_years
    n = y.size
    n_pre = np.arange(1, n + 1)
    n_post = n - n_pre
    return y[(n_pre >= min_seg) & (n_post >= min_seg)]


def _scan(series: CountSeries, min_seg: int, free_trend: bool) -> ChangepointScan:
    taus = admissible_taus(series, min_seg)
    if taus.size == 0:
        raise DegenerateSeries(
            f"{series.district_id}: no admissible change year with min_seg={min_seg}"
        )
    null_fit = trend_model.fit_null(series)
    fits = trend_model.fit_change_batch(series, taus, min_seg=min_seg, free_trend=free_trend)
    stats = np.full(taus.size, np.nan)
    ok = np.zeros(taus.size, dtype=bool)
    for k, f in enumerate(fits):
        if f.converged and null_fit.converged:
            stats[k] = 2.0 * (f.log_lik - null_fit.log_lik)
            ok[k] = True
    n_bad = int((~ok).sum())
    if n_bad:
        logger.warning("%s: %d of %d change years unavailable (non-converged fit)",
                       series.district_id, n_bad, taus.size)
    if ok.any():
        # First occurrence of the maximum = earliest tau on exact ties.
        k_best = int(np.nanargmax(stats))
        tau_hat = int(taus[k_best])
        t_max = float(stats[k_best])
        best = fits[k_best]
    else:
        tau_hat, t_max, best = None, float("nan"), None
    return ChangepointScan(series.district_id, taus, stats, tau_hat, t_max, null_fit, best)


def scan(series: CountSeries, min_seg: int = DEFAULT_MIN_SEG) -> ChangepointScan:
    """Scan for one abrupt level change under a shared trend (method 1)."""
    if min_seg < 2:
        raise InvalidTau("min_seg must be at least 2")
    return _scan(series, min_seg, free_trend=False)


def scan_trend_or_level(series: CountSeries, min_seg: int = DEFAULT_MIN_SEG) -> ChangepointScan:
    """Scan allowing a level shift, a trend change, or both (method 2)."""
    if min_seg < 3:
        raise InvalidTau("min_seg must be at least 3 for the level-or-trend scan")
    return _scan(series, min_seg, free_trend=True)


def null_statistic_sample(generator, reps: int, scanner=scan,
                          min_seg: int = DEFAULT_MIN_SEG) -> np.ndarray:
    """Maximal statistics of ``reps`` series drawn from a no-change sampler.

    ``generator(rep_index)`` must return a :class:`CountSeries`.  Scans
    with no available statistic are dropped (and counted in the log).
    """
    t = np.empty(reps)
    for i in range(reps):
        t[i] = scanner(generator(i), min_seg=min_seg).t_max
    bad = ~np.isfinite(t)
    if bad.any():
        logger.warning("calibration: dropping %d/%d unavailable scans", int(bad.sum()), reps)
        t = t[~bad]
    return t


def calibrate_threshold(n: int, generator, reps: int, fp_rate: float,
                        scanner=scan, min_seg: int = DEFAULT_MIN_SEG) -> float:
    """Empirical (1 - fp_rate) quantile of the null maximal statistic.

    ``n`` is the series length the generator produces (documentation of
    the calibration's scope; the generator owns the actual draws).
    """
    if reps < 100:
        raise ValueError("calibration needs at least 100 repetitions")
    if not 0.0 < fp_rate <= 1.0:
        raise ValueError("fp_rate must be in (0, 1]")
    t = null_statistic_sample(generator, reps, scanner=scanner, min_seg=min_seg)
    return float(np.quantile(t, 1.0 - fp_rate))


def rank(scans, known_changes=None) -> RankedReport:
    """Order scans by ``t_max`` descending, annotating known changes.

    ``known_changes`` maps district id to an iterable of boundary-change
    years; the nearest one (earliest on distance ties) is attached.
    """
    known_changes = known_changes or {}
    entries = []
    for s in scans:
        nearest, dist = None, None
        years = sorted(known_changes.get(s.district_id, ()))
        if years and s.tau_hat is not None:
            d = [abs(s.tau_hat - y) for y in years]
            i = int(np.argmin(d))
            nearest, dist = int(years[i]), int(d[i])
        entries.append(RankedEntry(s.district_id, s.tau_hat, s.t_max, nearest, dist))
    order = sorted(range(len(entries)),
                   key=lambda i: (-(entries[i].t_max) if np.isfinite(entries[i].t_max) else np.inf, i))
    return RankedReport(tuple(entries[i] for i in order))


# ---------------------------------------------------------------- #
# Serialization
# ---------------------------------------------------------------- #

REPORT_COLUMNS = ("district_id", "tau_hat", "t_max", "nearest_change", "distance")


def write_report_csv(report: RankedReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for e in report:
            w.writerow([
                e.district_id,
                "" if e.tau_hat is None else e.tau_hat,
                repr(e.t_max),
                "" if e.nearest_known_change is None else e.nearest_known_change,
                "" if e.distance_to_known_change is None else e.distance_to_known_change,
            ])


def report_to_dict(report: RankedReport) -> dict:
    return {
        "entries": [
            {
                "district_id": e.district_id,
                "tau_hat": e.tau_hat,
                "t_max": None if not np.isfinite(e.t_max) else e.t_max,
                "nearest_change": e.nearest_known_change,
                "distance": e.distance_to_known_change,
            }
            for e in report
        ]
    }


def write_report_json(report: RankedReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_curve_csv(scan_result: ChangepointScan, path) -> None:
    """Per-tau statistic curve as CSV (columns: tau, T) for plotting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("tau", "T"))
        for tau, t in zip(scan_result.tau_grid, scan_result.statistics):
            w.writerow([int(tau), repr(float(t))])
