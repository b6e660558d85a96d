"""Command line entry points.

Subcommands mirror the pipeline stages (``interpolate``, ``audit``,
``merge``, ``rates``, ``fpca``, ``cluster``, ``run``) plus the
``simulate`` study harness.  Every command exits 0 on success and
nonzero with a stage-tagged message otherwise.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import changepoint, cluster as cluster_mod, fpca, pipeline, simulate
from .errors import VitalSeriesError


def _add_common(p):
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="seed override")
    p.add_argument("--jobs", type=int, help="parallel scan workers")


def _load(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    cfg = pipeline.load_config(args.config, **overrides)
    out = args.out or cfg.out_dir
    if not out:
        raise VitalSeriesError("no output directory (use --out or config out_dir)")
    os.makedirs(out, exist_ok=True)
    return cfg, out


def _cmd_interpolate(args):
    cfg, out = _load(args)
    ingested = pipeline.ingest(cfg)
    interpolated = pipeline.interpolate_counts(cfg, ingested)
    pipeline.write_counts_csv(interpolated, os.path.join(out, "interpolated_counts.csv"))
    print(f"interpolated {len(interpolated.births)} districts "
          f"({len(interpolated.problems)} problem years) -> {out}")


def _cmd_audit(args):
    cfg, out = _load(args)
    ingested = pipeline.ingest(cfg)
    interpolated = pipeline.interpolate_counts(cfg, ingested)
    audit = pipeline.audit_counts(cfg, interpolated.deaths, ingested.change_log)
    changepoint.write_report_csv(audit.report, os.path.join(out, "audit_report.csv"))
    changepoint.write_report_json(audit.report, os.path.join(out, "audit_report.json"))
    if cfg.emit_curves or args.curves:
        curve_dir = os.path.join(out, "curves")
        os.makedirs(curve_dir, exist_ok=True)
        for district, s in sorted(audit.scans.items()):
            changepoint.write_curve_csv(s, os.path.join(curve_dir, f"{district}.csv"))
    top = list(audit.report)[:5]
    for e in top:
        print(f"{e.district_id}: tau_hat={e.tau_hat} T={e.t_max:.2f} "
              f"nearest_change={e.nearest_known_change}")
    if audit.threshold is not None:
        print(f"calibrated threshold: {audit.threshold:.3f}")


def _cmd_merge(args):
    cfg, out = _load(args)
    ingested = pipeline.ingest(cfg)
    interpolated = pipeline.interpolate_counts(cfg, ingested)
    merged = pipeline.apply_merges(cfg, interpolated)
    pipeline.write_counts_csv(merged, os.path.join(out, "merged_counts.csv"))
    print(f"merged {len(cfg.merges)} directive(s); "
          f"{len(merged.births)} districts -> {out}")


def _cmd_rates(args):
    cfg, out = _load(args)
    ingested = pipeline.ingest(cfg)
    interpolated = pipeline.interpolate_counts(cfg, ingested)
    counts = pipeline.apply_merges(cfg, interpolated) if cfg.merges else interpolated
    rates = {d: pipeline.compute_rates(counts.births[d], counts.deaths[d])
             for d in sorted(counts.births)}
    pipeline.write_rates_csv(rates, os.path.join(out, "rates.csv"))
    print(f"wrote rates for {len(rates)} districts -> {out}")


def _rates_for(cfg):
    ingested = pipeline.ingest(cfg)
    interpolated = pipeline.interpolate_counts(cfg, ingested)
    counts = pipeline.apply_merges(cfg, interpolated) if cfg.merges else interpolated
    return {d: pipeline.compute_rates(counts.births[d], counts.deaths[d])
            for d in sorted(counts.births)}


def _cmd_fpca(args):
    cfg, out = _load(args)
    model = pipeline.fit_fpca(cfg, _rates_for(cfg))
    fpca.write_model_json(model, os.path.join(out, "fpca_model.json"))
    fpca.write_scores_csv(model, os.path.join(out, "fpca_scores.csv"))
    shares = ", ".join(f"{v:.1%}" for v in model.variance_explained)
    print(f"fitted {model.n_components} components ({shares}) -> {out}")


def _cmd_cluster(args):
    cfg, out = _load(args)
    model = pipeline.fit_fpca(cfg, _rates_for(cfg))
    assignment, dendro = pipeline.cluster_scores(cfg, model)
    cluster_mod.write_assignment_csv(assignment, os.path.join(out, "clusters.csv"))
    if dendro is not None:
        cluster_mod.write_dendrogram_json(dendro, os.path.join(out, "dendrogram.json"))
    if args.scan_k:
        dims = min(cfg.cluster_dims, model.n_components)
        ks = range(2, min(12, len(model.district_ids) - 1) + 1)
        rows = cluster_mod.indices_over_k(
            model.scores[:, :dims], model.district_ids, ks,
            method=cfg.cluster_method, seed=cfg.seed)
        cluster_mod.write_indices_csv(rows, os.path.join(out, "cluster_indices.csv"))
    print(f"clustered {len(assignment.labels)} districts into {assignment.k} -> {out}")


def _cmd_run(args):
    cfg, out = _load(args)
    bundle = pipeline.run_full(cfg, out)
    print(f"wrote {len(bundle.artifacts)} artifacts and manifest -> {bundle.out_dir}")


def _cmd_simulate(args):
    taus = [int(v) for v in args.tau.split(",")]
    factors = [float(v) for v in args.factor.split(",")]
    methods = [int(v) for v in args.method.split(",")]
    results = simulate.run_table(
        args.scenario, taus=taus, factors=factors, reps=args.reps,
        seed=args.seed, methods=methods, n=args.n,
        calibration_reps=args.calibration_reps)
    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out, f"study_scenario{args.scenario}.csv")
    simulate.write_study_csv(results, out_csv)
    print(simulate.format_study_table(results))
    print(f"wrote {out_csv}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vitalseries",
        description="Boundary-consistent count series: interpolation, "
                    "changepoint audit, functional clustering.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in [("interpolate", _cmd_interpolate), ("merge", _cmd_merge),
                     ("rates", _cmd_rates), ("fpca", _cmd_fpca), ("run", _cmd_run)]:
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(fn=fn, stage=name)

    p = sub.add_parser("audit")
    _add_common(p)
    p.add_argument("--curves", action="store_true",
                   help="emit per-district statistic curves")
    p.set_defaults(fn=_cmd_audit, stage="audit")

    p = sub.add_parser("cluster")
    _add_common(p)
    p.add_argument("--scan-k", action="store_true",
                   help="also write validity indices over a range of k")
    p.set_defaults(fn=_cmd_cluster, stage="cluster")

    p = sub.add_parser("simulate")
    p.add_argument("--scenario", type=int, required=True, choices=(1, 2, 3, 4))
    p.add_argument("--tau", default="25,150", help="comma-separated change years")
    p.add_argument("--factor", default="0.5,0.8,1.2,1.5")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", default="1", help="1=level shift, 2=level or trend")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--calibration-reps", type=int, default=None)
    p.add_argument("--out", default=".")
    p.set_defaults(fn=_cmd_simulate, stage="simulate")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args.fn(args)
    except VitalSeriesError as exc:
        print(f"error [{args.stage}]: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error [{args.stage}]: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
