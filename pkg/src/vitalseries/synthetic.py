"""Synthetic fixtures: a boundary-change demo dataset and rate-curve
samples shaped like declining infant mortality curves.

The real vital statistics are licensed and not bundled, so tests and
demos run on generated data in the same file formats.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .areal import Zone
from .series import CountSeries

PERIOD = (1911, 1973)
CENSUS_YEARS = (1911, 1921, 1931, 1951, 1961, 1971)

#: The demo's deliberate interpolation error: a dense "new town" carved
#: out of a uniform-density parent district in this year.
DEMO_CHANGE_YEAR = 1935
DEMO_NEW_DISTRICT = "NEWTOWN"
DEMO_PARENT_DISTRICT = "D13"


def _square(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def _grid_ids(nx, ny):
    return [f"D{r * nx + c + 1:02d}" for r in range(ny) for c in range(nx)]


def demo_zones(nx: int = 5, ny: int = 5):
    """Boundary epochs for the demo: a district grid with one split.

    Before the change every epoch holds the plain nx x ny unit grid; from
    the first census after the change, the parent district's north-west
    quarter is a separate district.
    """
    ids = _grid_ids(nx, ny)
    epochs = {}
    parent_idx = ids.index(DEMO_PARENT_DISTRICT)
    py, px = divmod(parent_idx, nx)
    for year in CENSUS_YEARS:
        zones = []
        for i, did in enumerate(ids):
            r, c = divmod(i, nx)
            if year >= DEMO_CHANGE_YEAR and did == DEMO_PARENT_DISTRICT:
                # NW quarter becomes the new town; parent keeps the rest (L-shape).
                x0, y0 = float(c), float(r)
                corner = _square(x0, y0 + 0.5, x0 + 0.5, y0 + 1.0)
                rest = np.array([
                    [x0, y0], [x0 + 1, y0], [x0 + 1, y0 + 1],
                    [x0 + 0.5, y0 + 1], [x0 + 0.5, y0 + 0.5], [x0, y0 + 0.5],
                ])
                zones.append(Zone(DEMO_NEW_DISTRICT, (corner,), year))
                zones.append(Zone(did, (rest,), year))
            else:
                zones.append(Zone(did, (_square(c, r, c + 1, r + 1),), year))
        epochs[year] = zones
    return epochs


def demo_counts(seed: int = 20230):
    """Raw annual births and deaths per reporting district.

    Death rates decline over the period.  Half of the parent district's
    population lives in the quarter-area new town, so uniform-density
    interpolation of its pre-split years underestimates the new town by
    half: the audit should flag the new town first.
    """
    rng = np.random.default_rng(seed)
    ids = _grid_ids(5, 5)
    years = np.arange(PERIOD[0], PERIOD[1] + 1)
    t = (years - PERIOD[0]).astype(float)
    births_level = {did: int(lv) for did, lv in
                    zip(ids, rng.integers(400, 1200, size=len(ids)))}
    births_level[DEMO_PARENT_DISTRICT] = 1600

    # Exponentially declining death rates: the no-change trend model is
    # correctly specified on clean districts, so only real boundary
    # artifacts stand out in the audit.
    births = {}
    deaths = {}
    for did in ids:
        r0 = float(rng.uniform(95.0, 170.0))
        decay = float(rng.uniform(0.025, 0.04))
        district_rate = r0 * np.exp(-decay * t)
        b = rng.poisson(births_level[did], size=years.size)
        d = rng.poisson(b * district_rate / 1000.0)
        births[did], deaths[did] = b, d

    # Split the parent's counts between the dense corner and the remainder:
    # most of its people live in the quarter-area new town.
    share = 0.65
    nb = rng.binomial(births[DEMO_PARENT_DISTRICT], share)
    nd = rng.binomial(deaths[DEMO_PARENT_DISTRICT], share)
    rows = []
    for k, year in enumerate(years):
        for did in ids:
            if did == DEMO_PARENT_DISTRICT:
                if year < DEMO_CHANGE_YEAR:
                    rows.append((did, int(year), int(births[did][k]), int(deaths[did][k])))
                else:
                    rows.append((did, int(year),
                                 int(births[did][k] - nb[k]), int(deaths[did][k] - nd[k])))
                    rows.append((DEMO_NEW_DISTRICT, int(year), int(nb[k]), int(nd[k])))
            else:
                rows.append((did, int(year), int(births[did][k]), int(deaths[did][k])))
    return rows


def demo_change_log():
    return {DEMO_NEW_DISTRICT: [DEMO_CHANGE_YEAR], DEMO_PARENT_DISTRICT: [DEMO_CHANGE_YEAR]}


def write_demo_dataset(out_dir, seed: int = 20230) -> dict:
    """Write the demo dataset and a ready-to-run pipeline config.

    Returns the config dictionary (also written to ``config.json``).
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    counts_path = os.path.join(out_dir, "counts.csv")
    with open(counts_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("district_id", "year", "births", "deaths"))
        w.writerows(demo_counts(seed))

    epochs = demo_zones()
    boundary_files = {}
    for year, zones in epochs.items():
        path = os.path.join(out_dir, f"boundaries_{year}.geojson")
        features = []
        for z in zones:
            features.append({
                "type": "Feature",
                "properties": {"id": z.zone_id, "epoch_year": year},
                "geometry": {"type": "Polygon",
                             "coordinates": [[list(map(float, p)) for p in r]
                                             for r in z.rings]},
            })
        with open(path, "w") as fh:
            json.dump({"type": "FeatureCollection", "features": features}, fh)
        boundary_files[str(year)] = os.path.basename(path)

    log_path = os.path.join(out_dir, "changes.csv")
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("district_id", "year"))
        for did, years in demo_change_log().items():
            for y in years:
                w.writerow((did, y))

    config = {
        "counts_csv": "counts.csv",
        "boundary_files": boundary_files,
        "change_log_csv": "changes.csv",
        "target_epoch": 1971,
        "period": list(PERIOD),
        "excluded_years": list(range(1940, 1945)),
        "min_seg": 5,
        "threshold_mode": "rank-only",
        "merges": [],
        "fpca": {"num_basis": 12, "order": 3, "n_components": 4},
        "cluster": {"method": "upgma", "k": 9, "dims": 4},
        "seed": seed,
        "emit_curves": False,
    }
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
    return config


def injected_shift_series(district_id: str = "bad", n: int = 63, tau_index: int = 24,
                          level: float = 60.0, factor: float = 2.0,
                          trend: float = -0.02, seed: int = 5,
                          start_year: int = 1911) -> tuple[CountSeries, int]:
    """Count series with a known multiplicative level shift.

    Returns the series and the first post-shift calendar year.
    """
    rng = np.random.default_rng(seed)
    years = np.arange(start_year, start_year + n)
    t = np.arange(n)
    mu = level * np.exp(trend * t)
    mu[tau_index:] *= factor
    counts = rng.poisson(mu)
    return CountSeries(district_id, years, counts), int(years[tau_index])


def rate_curve_sample(n_districts: int = 1500, seed: int = 77,
                      noise_sd: float = 12.0):
    """District rate curves shaped like the period's mortality decline.

    Four smooth modes of variation with decreasing weight ride on a
    declining mean curve, plus white observation noise; with the default
    settings the leading four components carry roughly nine tenths of the
    coefficient-space variance.

    Returns (years, values matrix, district ids).
    """
    rng = np.random.default_rng(seed)
    years = np.arange(PERIOD[0], PERIOD[1] + 1)
    t = (years - PERIOD[0]).astype(float)
    mean = 15.0 + 115.0 * np.exp(-t / 18.0)
    modes = np.stack([
        np.exp(-t / 20.0),
        np.exp(-((t - 14.0) / 9.0) ** 2) - 0.7 * np.exp(-((t - 34.0) / 12.0) ** 2),
        np.exp(-((t - 24.0) / 8.0) ** 2),
        ((t - 31.0) / 31.0) * np.exp(-((t - 39.0) / 18.0) ** 2),
    ])
    sds = np.array([28.0, 9.0, 6.0, 4.5])
    scores = rng.normal(0.0, 1.0, size=(n_districts, 4)) * sds
    curves = mean[None, :] + scores @ modes
    curves += rng.normal(0.0, noise_sd, size=curves.shape)
    np.clip(curves, 0.5, None, out=curves)
    ids = tuple(f"SYN{j:04d}" for j in range(n_districts))
    return years, curves, ids
