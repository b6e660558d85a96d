"""Areal-weighted interpolation of counts across boundary epochs.

A target district's estimate for a year is the sum of that year's source
counts weighted by the fraction of each source's area overlapping the
target.  Across a history of boundary changes, each inter-change interval
is interpolated from the boundary epoch chosen by the epoch policy, and
years from the last change onward are copied through unchanged.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np
from shapely.geometry import Polygon
from shapely.validation import explain_validity

from .errors import AlignmentError, DegenerateRing, GeometryFailure, MissingEpoch
from .series import CountSeries

logger = logging.getLogger(__name__)

#: Weights smaller than this are snapped to exact zero.
WEIGHT_FLOOR = 1e-9

DEFAULT_PERIOD = (1911, 1973)
CENSUS_YEARS = (1911, 1921, 1931, 1951, 1961, 1971)


@dataclass(frozen=True)
class Zone:
    """One polygon of a district: an outer ring plus optional holes.

    Multi-part districts are represented as several zones sharing a
    ``zone_id``; weight construction aggregates them.
    """

    zone_id: str
    rings: tuple
    epoch_year: int

    def __post_init__(self):
        rings = tuple(np.asarray(r, dtype=float) for r in self.rings)
        if not rings:
            raise DegenerateRing(f"{self.zone_id}: zone needs at least an outer ring")
        for r in rings:
            if r.ndim != 2 or r.shape[1] != 2:
                raise DegenerateRing(f"{self.zone_id}: rings must be (m, 2) coordinate arrays")
            if np.unique(r, axis=0).shape[0] < 3:
                raise DegenerateRing(f"{self.zone_id}: ring has fewer than 3 distinct vertices")
        object.__setattr__(self, "rings", rings)

    @property
    def outer(self) -> np.ndarray:
        return self.rings[0]

    @property
    def holes(self) -> tuple:
        return self.rings[1:]


@dataclass(frozen=True)
class WeightMatrix:
    """Dense target x source areal weights for one epoch pair."""

    target_ids: tuple
    source_ids: tuple
    weights: np.ndarray
    source_epoch: int
    target_epoch: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.target_ids), len(self.source_ids)):
            raise AlignmentError("weights shape must be (targets, sources)")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class ChangeLog:
    """Known boundary-change years per district, within the study period."""

    changes: dict
    period: tuple = DEFAULT_PERIOD

    def __post_init__(self):
        lo, hi = self.period
        cleaned = {}
        for district, years in self.changes.items():
            ys = sorted(set(int(y) for y in years))
            for y in ys:
                if not lo <= y <= hi:
                    raise ValueError(f"{district}: change year {y} outside period {self.period}")
            cleaned[district] = tuple(ys)
        object.__setattr__(self, "changes", cleaned)

    def years_for(self, district_id: str) -> tuple:
        return self.changes.get(district_id, ())


def _ring_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_area(zone: Zone) -> float:
    """Shoelace area of the outer ring minus hole areas (orientation-free)."""
    area = abs(_ring_area(zone.outer))
    for hole in zone.holes:
        area -= abs(_ring_area(hole))
    return area


def _to_shapely(zone: Zone) -> Polygon:
    poly = Polygon(zone.outer, [h for h in zone.holes])
    if not poly.is_valid:
        raise GeometryFailure(f"{zone.zone_id}: {explain_validity(poly)}")
    if poly.area <= 0:
        raise GeometryFailure(f"{zone.zone_id}: zero-area polygon")
    return poly


def intersection_area(a: Zone, b: Zone) -> float:
    """Area of the geometric intersection of two zones (0 when disjoint)."""
    pa, pb = _to_shapely(a), _to_shapely(b)
    try:
        return float(pa.intersection(pb).area)
    except Exception as exc:  # GEOS topology errors
        raise GeometryFailure(f"clipping {a.zone_id} with {b.zone_id}: {exc}") from exc


def _group_by_id(zones) -> dict:
    grouped: dict = {}
    for z in zones:
        grouped.setdefault(z.zone_id, []).append(z)
    return grouped


def build_weight_matrix(sources, targets) -> WeightMatrix:
    """Fractional overlap weights w[target][source] = |S n T| / |S|.

    Multi-part districts are aggregated by id before the ratio is taken.
    Weights below ``WEIGHT_FLOOR`` are snapped to exact zero.
    """
    src = _group_by_id(sources)
    tgt = _group_by_id(targets)
    source_ids = tuple(src)
    target_ids = tuple(tgt)
    src_polys = {}
    src_areas = {}
    for sid, parts in src.items():
        try:
            src_polys[sid] = [_to_shapely(p) for p in parts]
        except GeometryFailure as exc:
            raise GeometryFailure(f"source {sid}: {exc}") from exc
        src_areas[sid] = sum(polygon_area(p) for p in parts)
    tgt_polys = {}
    for tid, parts in tgt.items():
        try:
            tgt_polys[tid] = [_to_shapely(p) for p in parts]
        except GeometryFailure as exc:
            raise GeometryFailure(f"target {tid}: {exc}") from exc

    w = np.zeros((len(target_ids), len(source_ids)))
    for j, tid in enumerate(target_ids):
        for i, sid in enumerate(source_ids):
            inter = 0.0
            for sp in src_polys[sid]:
                for tp in tgt_polys[tid]:
                    try:
                        inter += sp.intersection(tp).area
                    except Exception as exc:
                        raise GeometryFailure(
                            f"clipping source {sid} with target {tid}: {exc}") from exc
            w[j, i] = inter / src_areas[sid]
    w[w < WEIGHT_FLOOR] = 0.0
    src_epoch = sources[0].epoch_year if sources else 0
    tgt_epoch = targets[0].epoch_year if targets else 0
    return WeightMatrix(target_ids, source_ids, w, src_epoch, tgt_epoch)


def interpolate_year(weights: WeightMatrix, source_counts) -> np.ndarray:
    """Target estimates for one year: weights @ source counts."""
    x = np.asarray(source_counts, dtype=float)
    if x.shape != (len(weights.source_ids),):
        raise AlignmentError(
            f"expected {len(weights.source_ids)} source counts, got {x.shape}")
    if np.any(x < 0):
        raise AlignmentError("source counts must be nonnegative")
    return weights.weights @ x


def round_counts(values) -> np.ndarray:
    """Nearest integer, ties (.5) rounding half up."""
    v = np.asarray(values, dtype=float)
    if np.any(v < 0):
        raise ValueError("counts to round must be nonnegative")
    return np.floor(v + 0.5).astype(np.int64)


def select_epoch(change_year: int, epoch_years, policy: str = "next-available") -> int:
    """Census epoch used for the interval starting at ``change_year``.

    ``next-available`` takes the earliest census at or after the change
    (boundaries recorded after the change took effect); the
    ``previous-census`` alternative takes the latest census at or before.
    """
    years = sorted(epoch_years)
    if policy == "next-available":
        for y in years:
            if y >= change_year:
                return y
        raise MissingEpoch(f"no census epoch at or after change year {change_year}")
    if policy == "previous-census":
        chosen = None
        for y in years:
            if y <= change_year:
                chosen = y
        if chosen is None:
            raise MissingEpoch(f"no census epoch at or before change year {change_year}")
        return chosen
    raise ValueError(f"unknown epoch policy {policy!r}")


@dataclass
class InterpolationProblem:
    """A year that could not be estimated and was marked excluded."""

    district_id: str
    year: int
    reason: str


def plan_intervals(changes, period, epoch_years, policy: str = "next-available"):
    """Year intervals with their handling: raw copy or epoch interpolation.

    Returns (start, end_exclusive, kind, epoch) tuples.  ``raw`` intervals
    copy counts straight through (no changes at all, or the stretch from
    the last change onward); ``interp`` intervals estimate from the chosen
    epoch, with ``None`` when no epoch can serve (years then excluded).
    """
    epoch_years = sorted(epoch_years)

    def chosen(change_year):
        if not epoch_years:
            return None
        if change_year is None:  # before the first change
            return epoch_years[0]
        try:
            return select_epoch(change_year, epoch_years, policy)
        except MissingEpoch:
            return None

    intervals = []
    if not changes:
        intervals.append((period[0], period[1] + 1, "raw", None))
        return intervals
    if changes[0] > period[0]:
        intervals.append((period[0], changes[0], "interp", chosen(None)))
    for k in range(len(changes) - 1):
        intervals.append((changes[k], changes[k + 1], "interp", chosen(changes[k])))
    intervals.append((changes[-1], period[1] + 1, "raw", None))
    return intervals


def assemble_series(district_id: str, changes, row_provider, raw: dict,
                    epoch_years, period=DEFAULT_PERIOD,
                    policy: str = "next-available",
                    problems: list | None = None) -> CountSeries:
    """Per-year assembly of one district's consistent series.

    ``row_provider(epoch_year)`` returns (source_ids, weight_row) for the
    district on that epoch's sources, or ``None`` when unavailable.  Years
    that cannot be estimated (missing epoch, missing source count) are
    marked excluded and recorded, never imputed.
    """
    years = np.arange(period[0], period[1] + 1)
    values = np.zeros(years.size, dtype=np.int64)
    excluded = np.zeros(years.size, dtype=bool)
    problems = problems if problems is not None else []
    intervals = plan_intervals(tuple(changes), period, epoch_years, policy)

    for start, end, kind, epoch_year in intervals:
        row = None
        if kind == "interp" and epoch_year is not None:
            row = row_provider(epoch_year)
        for year in range(start, end):
            i = int(year - period[0])
            year_counts = raw.get(year, {})
            if kind == "raw":
                if district_id not in year_counts:
                    excluded[i] = True
                    problems.append(InterpolationProblem(
                        district_id, year, "missing raw count"))
                    logger.warning("%s %d: missing raw count; year excluded",
                                   district_id, year)
                else:
                    values[i] = int(year_counts[district_id])
                continue
            if row is None:
                excluded[i] = True
                problems.append(InterpolationProblem(
                    district_id, year, f"missing epoch for interval from {start}"))
                logger.warning("%s %d: no usable epoch; year excluded",
                               district_id, year)
                continue
            source_ids, weights = row
            missing = [sid for k, sid in enumerate(source_ids)
                       if weights[k] > 0.0 and sid not in year_counts]
            if missing:
                excluded[i] = True
                problems.append(InterpolationProblem(
                    district_id, year, f"missing source counts {missing}"))
                logger.warning("%s %d: missing source counts %s; year excluded",
                               district_id, year, missing)
                continue
            x = np.array([float(year_counts.get(sid, 0.0)) for sid in source_ids])
            est = float(weights @ x)
            if est < 0:
                est = 0.0
            values[i] = int(round_counts([est])[0])
    return CountSeries(district_id, years, values, excluded)


def build_consistent_series(target, change_log: ChangeLog, epochs: dict, raw: dict,
                            period=DEFAULT_PERIOD, policy: str = "next-available",
                            problems: list | None = None) -> CountSeries:
    """Single-district series on the target boundaries across all changes.

    ``target`` is one Zone or a list of parts sharing an id.  ``epochs``
    maps census year to that epoch's source zones; ``raw`` maps year to
    {district id: count} as reported on the boundaries current that year.
    """
    target_parts = [target] if isinstance(target, Zone) else list(target)
    district_id = target_parts[0].zone_id
    cache: dict = {}

    def row_provider(epoch_year):
        if epoch_year not in epochs:
            return None
        if epoch_year not in cache:
            wm = build_weight_matrix(epochs[epoch_year], target_parts)
            cache[epoch_year] = (wm.source_ids, wm.weights[0])
        return cache[epoch_year]

    return assemble_series(district_id, change_log.years_for(district_id),
                           row_provider, raw, epochs.keys(), period, policy, problems)


# ---------------------------------------------------------------- #
# File formats
# ---------------------------------------------------------------- #

def load_zones_geojson(path, epoch_year: int | None = None,
                       id_property: str = "id") -> list:
    """Zones from a GeoJSON feature collection (Polygon/MultiPolygon).

    Each feature needs an id property; the epoch year comes from the
    feature's ``epoch_year`` property unless given here.  MultiPolygons
    become several zones sharing the feature id.
    """
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise GeometryFailure(f"{path}: expected a FeatureCollection")
    zones = []
    for feat in doc.get("features", []):
        props = feat.get("properties", {})
        if id_property not in props:
            raise GeometryFailure(f"{path}: feature missing {id_property!r} property")
        zid = str(props[id_property])
        year = int(props.get("epoch_year", epoch_year if epoch_year is not None else 0))
        geom = feat.get("geometry", {})
        gtype = geom.get("type")
        coords = geom.get("coordinates", [])
        if gtype == "Polygon":
            parts = [coords]
        elif gtype == "MultiPolygon":
            parts = coords
        else:
            raise GeometryFailure(f"{path}: {zid}: unsupported geometry {gtype}")
        for rings in parts:
            zones.append(Zone(zid, tuple(np.asarray(r, float) for r in rings), year))
    return zones


def write_weight_matrix_csv(wm: WeightMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("target_id", "source_id", "weight"))
        for j, tid in enumerate(wm.target_ids):
            for i, sid in enumerate(wm.source_ids):
                if wm.weights[j, i] != 0.0:
                    w.writerow((tid, sid, repr(float(wm.weights[j, i]))))


def read_weight_matrix_csv(path, source_epoch: int = 0, target_epoch: int = 0) -> WeightMatrix:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"target_id", "source_id", "weight"}
        if not required.issubset(reader.fieldnames or ()):
            raise AlignmentError(f"{path}: weight CSV needs columns {sorted(required)}")
        for row in reader:
            rows.append((row["target_id"], row["source_id"], float(row["weight"])))
    target_ids = tuple(dict.fromkeys(r[0] for r in rows))
    source_ids = tuple(dict.fromkeys(r[1] for r in rows))
    w = np.zeros((len(target_ids), len(source_ids)))
    ti = {t: j for j, t in enumerate(target_ids)}
    si = {s: i for i, s in enumerate(source_ids)}
    for tid, sid, val in rows:
        w[ti[tid], si[sid]] = val
    return WeightMatrix(target_ids, source_ids, w, source_epoch, target_epoch)
