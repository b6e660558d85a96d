"""Batch orchestration: ingest files, build consistent series, audit for
interpolation errors, apply operator merges, compute rates, extract
functional components and cluster.

Every stage is a plain function over in-memory tables so the steps can be
driven individually or via :func:`run_full`, which also writes the
artifact bundle and a reproducibility manifest.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy

from . import __version__, areal, changepoint, cluster as cluster_mod, fpca
from .errors import (
    DegenerateSeries,
    InvalidConfig,
    DuplicateKey,
    ParseError,
    SchemaError,
    UnknownDistrict,
)
from .series import CountSeries

logger = logging.getLogger(__name__)

DEFAULT_EXCLUDED_YEARS = tuple(range(1940, 1945))


@dataclass(frozen=True)
class MergeDirective:
    new_id: str
    members: tuple


@dataclass(frozen=True)
class PipelineConfig:
    counts_csv: str
    change_log_csv: str | None = None
    boundary_files: dict = field(default_factory=dict)   # epoch year -> geojson
    weight_files: dict = field(default_factory=dict)     # epoch year -> weights csv
    target_epoch: int = 1971
    period: tuple = areal.DEFAULT_PERIOD
    excluded_years: tuple = DEFAULT_EXCLUDED_YEARS
    min_seg: int = 5
    threshold_mode: str = "rank-only"   # or "calibrated"
    calibration_reps: int = 200
    fp_rate: float = 0.05
    epoch_policy: str = "next-available"
    merges: tuple = ()
    fpca_num_basis: int = 12
    fpca_order: int = 3
    fpca_components: int = 4
    cluster_method: str = "upgma"
    cluster_k: int = 9
    cluster_dims: int = 4
    kmeans_restarts: int = 10
    seed: int = 0
    out_dir: str | None = None
    emit_curves: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.threshold_mode not in ("rank-only", "calibrated"):
            raise InvalidConfig(f"unknown threshold_mode {self.threshold_mode!r}")
        lo, hi = self.period
        for y in self.excluded_years:
            if not lo <= y <= hi:
                raise InvalidConfig(f"excluded year {y} outside period {self.period}")
        seen: set = set()
        for m in self.merges:
            overlap = seen.intersection(m.members)
            if overlap:
                raise InvalidConfig(
                    f"districts {sorted(overlap)} appear in more than one merge set")
            seen.update(m.members)


def load_config(path, **overrides) -> PipelineConfig:
    """Read a JSON config, resolving relative paths against its directory."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    kwargs = {
        "counts_csv": resolve(doc["counts_csv"]),
        "boundary_files": {int(k): resolve(v)
                           for k, v in doc.get("boundary_files", {}).items()},
        "weight_files": {int(k): resolve(v)
                         for k, v in doc.get("weight_files", {}).items()},
    }
    if doc.get("change_log_csv"):
        kwargs["change_log_csv"] = resolve(doc["change_log_csv"])
    for name in ("target_epoch", "min_seg", "threshold_mode", "calibration_reps",
                 "fp_rate", "epoch_policy", "seed", "emit_curves", "jobs"):
        if name in doc:
            kwargs[name] = doc[name]
    if "period" in doc:
        kwargs["period"] = tuple(doc["period"])
    if "excluded_years" in doc:
        kwargs["excluded_years"] = tuple(doc["excluded_years"])
    if "merges" in doc:
        kwargs["merges"] = tuple(
            MergeDirective(m["new_id"], tuple(m["members"])) for m in doc["merges"])
    if "fpca" in doc:
        f = doc["fpca"]
        kwargs["fpca_num_basis"] = f.get("num_basis", 12)
        kwargs["fpca_order"] = f.get("order", 3)
        kwargs["fpca_components"] = f.get("n_components", 4)
    if "cluster" in doc:
        c = doc["cluster"]
        kwargs["cluster_method"] = c.get("method", "upgma")
        kwargs["cluster_k"] = c.get("k", 9)
        kwargs["cluster_dims"] = c.get("dims", 4)
        kwargs["kmeans_restarts"] = c.get("restarts", 10)
    if "out_dir" in doc:
        kwargs["out_dir"] = resolve(doc["out_dir"])
    kwargs.update(overrides)
    cfg = PipelineConfig(**kwargs)
    for p in [cfg.counts_csv, cfg.change_log_csv,
              *cfg.boundary_files.values(), *cfg.weight_files.values()]:
        if p and not os.path.exists(p):
            raise InvalidConfig(f"configured path does not exist: {p}")
    return cfg


# ---------------------------------------------------------------- #
# Ingest
# ---------------------------------------------------------------- #

@dataclass
class Ingested:
    births: dict          # year -> {district: count}
    deaths: dict
    change_log: areal.ChangeLog
    zones_by_epoch: dict  # epoch year -> [Zone]
    weights_by_epoch: dict  # epoch year -> WeightMatrix
    target_ids: tuple


def _read_counts_csv(path):
    births: dict = {}
    deaths: dict = {}
    seen: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"district_id", "year", "births", "deaths"}
        if not required.issubset(reader.fieldnames or ()):
            raise SchemaError(f"{path}: counts CSV needs columns {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                district = row["district_id"]
                year = int(row["year"])
                b = int(row["births"])
                d = int(row["deaths"])
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            if b < 0 or d < 0:
                raise SchemaError(f"{path}:{lineno}: negative count for "
                                  f"{district}/{year}")
            key = (district, year)
            if key in seen:
                raise DuplicateKey(
                    f"{path}:{lineno}: duplicate entry for {district}/{year} "
                    f"(first at line {seen[key]})")
            seen[key] = lineno
            births.setdefault(year, {})[district] = b
            deaths.setdefault(year, {})[district] = d
    return births, deaths


def _read_change_log(path, period) -> areal.ChangeLog:
    changes: dict = {}
    if path is None:
        return areal.ChangeLog({}, period)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"district_id", "year"}
        if not required.issubset(reader.fieldnames or ()):
            raise SchemaError(f"{path}: change log needs columns {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                changes.setdefault(row["district_id"], []).append(int(row["year"]))
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return areal.ChangeLog(changes, period)


def ingest(config: PipelineConfig) -> Ingested:
    """Parse and validate all configured inputs."""
    births, deaths = _read_counts_csv(config.counts_csv)
    change_log = _read_change_log(config.change_log_csv, config.period)
    zones_by_epoch = {}
    for year, path in sorted(config.boundary_files.items()):
        zones_by_epoch[year] = areal.load_zones_geojson(path, epoch_year=year)
    weights_by_epoch = {}
    for year, path in sorted(config.weight_files.items()):
        weights_by_epoch[year] = areal.read_weight_matrix_csv(
            path, source_epoch=year, target_epoch=config.target_epoch)

    if zones_by_epoch:
        if config.target_epoch not in zones_by_epoch:
            raise InvalidConfig(
                f"target epoch {config.target_epoch} has no boundary file")
        target_ids = tuple(sorted({z.zone_id
                                   for z in zones_by_epoch[config.target_epoch]}))
    elif weights_by_epoch:
        ids = set()
        for wm in weights_by_epoch.values():
            ids.update(wm.target_ids)
        final = births.get(config.period[1], {})
        ids.update(d for d in final if not change_log.years_for(d))
        target_ids = tuple(sorted(ids))
    else:
        # Counts-only mode: districts as reported in the final year.
        target_ids = tuple(sorted(births.get(config.period[1], {})))
    return Ingested(births, deaths, change_log, zones_by_epoch, weights_by_epoch,
                    target_ids)


# ---------------------------------------------------------------- #
# Interpolation
# ---------------------------------------------------------------- #

@dataclass
class InterpolatedCounts:
    births: dict    # district -> CountSeries
    deaths: dict
    problems: list


def interpolate_counts(config: PipelineConfig, ingested: Ingested) -> InterpolatedCounts:
    """Consistent per-target series for births and deaths separately."""
    problems: list = []
    row_cache: dict = {}

    if ingested.zones_by_epoch:
        targets_by_id: dict = {}
        for z in ingested.zones_by_epoch[config.target_epoch]:
            targets_by_id.setdefault(z.zone_id, []).append(z)
        epoch_years = sorted(ingested.zones_by_epoch)

        def provider_for(district):
            def provider(epoch_year):
                key = (district, epoch_year)
                if key not in row_cache:
                    wm = areal.build_weight_matrix(
                        ingested.zones_by_epoch[epoch_year], targets_by_id[district])
                    row_cache[key] = (wm.source_ids, wm.weights[0])
                return row_cache[key]
            return provider
    elif ingested.weights_by_epoch:
        epoch_years = sorted(ingested.weights_by_epoch)

        def provider_for(district):
            def provider(epoch_year):
                wm = ingested.weights_by_epoch.get(epoch_year)
                if wm is None or district not in wm.target_ids:
                    return None
                j = wm.target_ids.index(district)
                return wm.source_ids, wm.weights[j]
            return provider
    else:
        epoch_years = []

        def provider_for(district):
            return lambda epoch_year: None

    births: dict = {}
    deaths: dict = {}
    for district in ingested.target_ids:
        changes = ingested.change_log.years_for(district)
        provider = provider_for(district)
        try:
            births[district] = areal.assemble_series(
                district, changes, provider, ingested.births, epoch_years,
                config.period, config.epoch_policy, problems)
            deaths[district] = areal.assemble_series(
                district, changes, provider, ingested.deaths, epoch_years,
                config.period, config.epoch_policy, problems)
        except DegenerateSeries as exc:
            logger.warning("skipping %s: %s", district, exc)
            births.pop(district, None)
            deaths.pop(district, None)
    return InterpolatedCounts(births, deaths, problems)


# ---------------------------------------------------------------- #
# Audit
# ---------------------------------------------------------------- #

@dataclass
class AuditResult:
    report: changepoint.RankedReport
    scans: dict
    threshold: float | None
    skipped: tuple = ()


def _null_series_generator(years, excluded, seed):
    """No-change generator over the data's own year grid (for calibration)."""
    years = np.asarray(years)
    excluded = np.asarray(excluded)

    def generate(rep_index):
        rng = np.random.default_rng([seed, 910, rep_index])
        a = rng.uniform(2.0, 4.0)
        b = rng.uniform(-0.025, 0.025)
        t = years - years.mean()
        counts = rng.poisson(np.exp(a + b * t))
        return CountSeries("null", years, counts, excluded)
    return generate


def _scan_one(args):
    series, min_seg = args
    try:
        return changepoint.scan(series, min_seg=min_seg)
    except DegenerateSeries as exc:
        return exc


def audit_counts(config: PipelineConfig, deaths: dict,
                 change_log: areal.ChangeLog) -> AuditResult:
    """Scan every district's death-count series and rank the evidence.

    Scans are independent; with ``jobs > 1`` they run in a process pool
    and are collected in district order, so output is schedule-free.
    """
    scans: dict = {}
    skipped = []
    districts = sorted(deaths)
    tasks = [(deaths[d].with_exclusions(config.excluded_years), config.min_seg)
             for d in districts]
    if config.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_scan_one, tasks, chunksize=8))
    else:
        results = [_scan_one(t) for t in tasks]
    for district, result in zip(districts, results):
        if isinstance(result, Exception):
            skipped.append(district)
            logger.warning("audit skipped %s: %s", district, result)
        else:
            scans[district] = result
    threshold = None
    if config.threshold_mode == "calibrated" and scans:
        any_series = next(iter(deaths.values())).with_exclusions(config.excluded_years)
        gen = _null_series_generator(any_series.years, any_series.excluded, config.seed)
        threshold = changepoint.calibrate_threshold(
            len(any_series), gen, config.calibration_reps, config.fp_rate,
            min_seg=config.min_seg)
    report = changepoint.rank(scans.values(), change_log.changes)
    return AuditResult(report, scans, threshold, tuple(skipped))


def run_audit(config: PipelineConfig):
    """Ingest, interpolate and audit in one call."""
    ingested = ingest(config)
    interpolated = interpolate_counts(config, ingested)
    return audit_counts(config, interpolated.deaths, ingested.change_log)


# ---------------------------------------------------------------- #
# Merges and rates
# ---------------------------------------------------------------- #

def apply_merges(config: PipelineConfig, counts: InterpolatedCounts) -> InterpolatedCounts:
    """Aggregate each merge set into a new district; members are removed.

    A merged year is excluded when any member's year is excluded (the sum
    would silently understate the aggregate).
    """
    births = dict(counts.births)
    deaths = dict(counts.deaths)
    for directive in config.merges:
        missing = [m for m in directive.members if m not in births]
        if missing:
            raise UnknownDistrict(
                f"merge {directive.new_id}: unknown districts {missing}")
        member_b = [births.pop(m) for m in directive.members]
        member_d = [deaths.pop(m) for m in directive.members]
        years = member_b[0].years
        b_sum = np.sum([s.counts for s in member_b], axis=0)
        d_sum = np.sum([s.counts for s in member_d], axis=0)
        excl = np.any([s.excluded for s in member_b + member_d], axis=0)
        births[directive.new_id] = CountSeries(directive.new_id, years, b_sum, excl)
        deaths[directive.new_id] = CountSeries(directive.new_id, years, d_sum, excl)
    return InterpolatedCounts(births, deaths, counts.problems)


def merged_change_log(config: PipelineConfig, change_log: areal.ChangeLog) -> areal.ChangeLog:
    """Change log with merge members folded into their new district."""
    if not config.merges:
        return change_log
    changes = {k: list(v) for k, v in change_log.changes.items()}
    for directive in config.merges:
        pooled: set = set()
        for m in directive.members:
            pooled.update(changes.pop(m, ()))
        if pooled:
            changes[directive.new_id] = sorted(pooled)
    return areal.ChangeLog(changes, change_log.period)


@dataclass(frozen=True)
class RateSeries:
    """Deaths per 1000 births; missing where births are zero or a year
    could not be interpolated."""

    district_id: str
    years: np.ndarray
    rate: np.ndarray
    missing: np.ndarray


def compute_rates(births: CountSeries, deaths: CountSeries) -> RateSeries:
    if not np.array_equal(births.years, deaths.years):
        raise InvalidConfig(f"{births.district_id}: births/deaths years differ")
    b = births.counts.astype(float)
    d = deaths.counts.astype(float)
    missing = (b == 0) | births.excluded | deaths.excluded
    rate = np.zeros_like(b)
    np.divide(1000.0 * d, b, out=rate, where=~missing)
    rate[missing] = np.nan
    return RateSeries(births.district_id, births.years, rate, missing)


# ---------------------------------------------------------------- #
# Functional components and clustering
# ---------------------------------------------------------------- #

def fit_fpca(config: PipelineConfig, rates: dict):
    """Smooth every rate curve and fit the functional components."""
    basis = fpca.build_basis(config.period[0], config.period[1],
                             config.fpca_num_basis, config.fpca_order)
    curves = []
    for district in sorted(rates):
        r = rates[district]
        try:
            curves.append(fpca.smooth(r.years, r.rate, basis, district))
        except Exception as exc:
            logger.warning("fpca skipped %s: %s", district, exc)
    model = fpca.fit(curves, basis, config.fpca_components)
    return model


def cluster_scores(config: PipelineConfig, model):
    dims = min(config.cluster_dims, model.n_components)
    pts = model.scores[:, :dims]
    ids = model.district_ids
    k = min(config.cluster_k, len(ids))
    if k < config.cluster_k:
        logger.warning("cluster count clamped to %d (only %d districts)", k, len(ids))
    if config.cluster_method == "kmeans":
        assignment = cluster_mod.kmeans(pts, k, seed=config.seed, ids=ids,
                                        restarts=config.kmeans_restarts)
        dendro = None
    else:
        dendro = cluster_mod.upgma(cluster_mod.pairwise_distances(pts), ids)
        assignment = cluster_mod.cut(dendro, k)
    return assignment, dendro


# ---------------------------------------------------------------- #
# Artifacts
# ---------------------------------------------------------------- #

def write_counts_csv(counts: InterpolatedCounts, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("district_id", "year", "births", "deaths", "excluded"))
        for district in sorted(counts.births):
            b = counts.births[district]
            d = counts.deaths[district]
            for i, year in enumerate(b.years):
                w.writerow((district, int(year), int(b.counts[i]), int(d.counts[i]),
                            int(b.excluded[i] or d.excluded[i])))


def write_rates_csv(rates: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("district_id", "year", "rate"))
        for district in sorted(rates):
            r = rates[district]
            for i, year in enumerate(r.years):
                w.writerow((district, int(year),
                            "" if r.missing[i] else repr(float(r.rate[i]))))


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _config_digest(config: PipelineConfig) -> str:
    doc = {k: sorted(v.items()) if isinstance(v, dict) else v
           for k, v in vars(config).items()}
    doc["merges"] = [(m.new_id, list(m.members)) for m in config.merges]
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()


@dataclass
class RunBundle:
    out_dir: str
    manifest_path: str
    artifacts: dict


def run_full(config: PipelineConfig, out_dir: str | None = None) -> RunBundle:
    """Full pipeline; writes the artifact bundle plus ``manifest.json``.

    Stages: interpolate, audit, optional merges with re-audit, rates,
    functional components, clustering.  Identical config and seed yield
    byte-identical artifacts.
    """
    out = out_dir or config.out_dir
    if not out:
        raise InvalidConfig("an output directory is required")
    os.makedirs(out, exist_ok=True)

    ingested = ingest(config)
    interpolated = interpolate_counts(config, ingested)
    audit = audit_counts(config, interpolated.deaths, ingested.change_log)

    artifacts = {}

    def emit(name, writer, *args):
        path = os.path.join(out, name)
        writer(*args, path)
        artifacts[name] = path

    emit("interpolated_counts.csv", write_counts_csv, interpolated)
    emit("audit_report.csv", changepoint.write_report_csv, audit.report)
    emit("audit_report.json", changepoint.write_report_json, audit.report)
    if config.emit_curves:
        curve_dir = os.path.join(out, "curves")
        os.makedirs(curve_dir, exist_ok=True)
        for district, s in sorted(audit.scans.items()):
            cpath = os.path.join(curve_dir, f"{district}.csv")
            changepoint.write_curve_csv(s, cpath)
            artifacts[os.path.join("curves", f"{district}.csv")] = cpath

    counts = interpolated
    change_log = ingested.change_log
    if config.merges:
        counts = apply_merges(config, interpolated)
        change_log = merged_change_log(config, ingested.change_log)
        re_audit = audit_counts(config, counts.deaths, change_log)
        emit("merged_counts.csv", write_counts_csv, counts)
        emit("audit_report_postmerge.csv", changepoint.write_report_csv, re_audit.report)
        emit("audit_report_postmerge.json", changepoint.write_report_json, re_audit.report)

    rates = {d: compute_rates(counts.births[d], counts.deaths[d])
             for d in sorted(counts.births)}
    emit("rates.csv", write_rates_csv, rates)

    model = fit_fpca(config, rates)
    emit("fpca_model.json", fpca.write_model_json, model)
    emit("fpca_scores.csv", fpca.write_scores_csv, model)

    assignment, _dendro = cluster_scores(config, model)
    emit("clusters.csv", cluster_mod.write_assignment_csv, assignment)

    manifest = {
        "package_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "config_sha256": _config_digest(config),
        "seed": config.seed,
        "threshold": audit.threshold,
        "interpolation_problems": len(interpolated.problems),
        "audit_skipped": list(audit.skipped),
        "artifacts": {name: _sha256(path) for name, path in sorted(artifacts.items())},
    }
    manifest_path = os.path.join(out, "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return RunBundle(out, manifest_path, artifacts)
