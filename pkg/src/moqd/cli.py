"""Command-line entry points: run, plot, compare, tessellate.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from moqd.archive import MoqdArchive, cvt_centroids
from moqd.bench import compare_runs, read_metrics_csv, run_to_directory
from moqd.config import ConfigError, load_config
from moqd.plotting import svg_archive_heatmap, svg_curves

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _load_config_or_usage_error(path: str, seed: int = 0):
    try:
        return load_config(path, seed=seed)
    except FileNotFoundError as err:
        raise ConfigError("--config", f"cannot read {path!r}: {err}") from err


def _cmd_run(args) -> int:
    resolved = _load_config_or_usage_error(args.config, seed=args.seed)
    run_to_directory(resolved, args.out)
    print(f"run complete: {args.out}")
    return 0


def _curve_inputs(paths: list[str], metric: str):
    series: dict[str, list] = {}
    for path in paths:
        if os.path.isdir(path):
            manifest_path = os.path.join(path, "manifest.json")
            with open(manifest_path, "r", encoding="utf-8") as fh:
                label = json.load(fh)["algorithm"]
            rows = read_metrics_csv(os.path.join(path, "metrics.csv"))
        else:
            label = os.path.splitext(os.path.basename(path))[0]
            rows = read_metrics_csv(path)
        evals = np.array([r.evaluations for r in rows])
        values = np.array(
            [getattr(r, metric) if getattr(r, metric) is not None else np.nan for r in rows]
        )
        series.setdefault(label, []).append((evals, values))
    return series


def _archive_input(path: str, ref_override):
    if os.path.isdir(path):
        archive = MoqdArchive.load(os.path.join(path, "archive.jsonl"))
        if ref_override is None:
            from moqd.config import load_config as _load

            resolved = _load(os.path.join(path, "config.toml"))
            ref = resolved.reference_point
        else:
            ref = ref_override
    else:
        archive = MoqdArchive.load(path)
        if ref_override is None:
            raise ConfigError("--ref", "a bare snapshot needs an explicit reference point")
        ref = ref_override
    return archive, ref


def _cmd_plot(args) -> int:
    if args.kind == "curves":
        series = _curve_inputs(args.inputs, args.metric)
        svg = svg_curves(series, y_label=args.metric)
    else:
        if len(args.inputs) != 1:
            raise ConfigError("inputs", "archive plots take exactly one run directory or snapshot")
        ref = tuple(float(v) for v in args.ref.split(",")) if args.ref else None
        archive, ref = _archive_input(args.inputs[0], ref)
        svg = svg_archive_heatmap(archive, ref)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(svg)
    print(f"wrote {args.out}")
    return 0


def _cmd_compare(args) -> int:
    comparison = compare_runs(args.dirs, metric=args.metric)
    print(comparison.as_text())
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(comparison.as_csv())
        print(f"wrote {args.csv}")
    return 0


def _cmd_tessellate(args) -> int:
    resolved = _load_config_or_usage_error(args.config)
    cfg = resolved.algorithm_config
    key = [cfg.cvt_seed] if cfg.cvt_seed is not None else [cfg.seed, 1]
    centroids = cvt_centroids(
        resolved.env.descriptor_bounds, cfg.cells, cfg.cvt_samples, seed=key
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(
            {"points": centroids.points.tolist(), "bounds": centroids.bounds.tolist()},
            fh,
            indent=2,
        )
        fh.write("\n")
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moqd",
        description="Multi-objective quality-diversity benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one configured run")
    p_run.add_argument("--config", required=True, help="TOML run configuration")
    p_run.add_argument("--seed", type=int, required=True)
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.set_defaults(func=_cmd_run)

    p_plot = sub.add_parser("plot", help="emit an SVG figure")
    p_plot.add_argument("--kind", choices=("curves", "archive"), required=True)
    p_plot.add_argument("--out", required=True, help="output SVG path")
    p_plot.add_argument("--metric", default="moqd_score")
    p_plot.add_argument("--ref", default=None, help="f1,f2 reference point override")
    p_plot.add_argument("inputs", nargs="+", help="run directories, metrics.csv or archive.jsonl")
    p_plot.set_defaults(func=_cmd_plot)

    p_cmp = sub.add_parser("compare", help="statistical comparison of run directories")
    p_cmp.add_argument("--metric", default="moqd_score")
    p_cmp.add_argument("--csv", default=None, help="also write the table as CSV")
    p_cmp.add_argument("dirs", nargs="+")
    p_cmp.set_defaults(func=_cmd_compare)

    p_tess = sub.add_parser("tessellate", help="compute and save CVT centroids")
    p_tess.add_argument("--config", required=True)
    p_tess.add_argument("--out", required=True)
    p_tess.set_defaults(func=_cmd_tessellate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return RUNTIME_ERROR
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
