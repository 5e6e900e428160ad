"""Run orchestration and comparison: metrics persistence, manifests,
paired statistics and data-efficiency ratios over completed run
directories."""

from __future__ import annotations

import hashlib
import json
import math
import os
import subprocess
import time
from dataclasses import dataclass

import numpy as np

from moqd import __version__
from moqd.algorithms import MetricsRecord, RunResult, run
from moqd.config import ResolvedConfig
from moqd.stats import holm_bonferroni, wilcoxon_signed_rank

__all__ = [
    "CSV_HEADER",
    "PairingError",
    "write_metrics_csv",
    "read_metrics_csv",
    "config_hash",
    "version_string",
    "run_to_directory",
    "first_reach",
    "efficiency_ratio",
    "compare_runs",
    "ComparisonRow",
    "Comparison",
]

CSV_HEADER = "evals,moqd_score,global_hv,max_sum,coverage,seconds"


class PairingError(ValueError):
    """Replication seeds do not line up across compared algorithms."""


def write_metrics_csv(path: str, rows: list[MetricsRecord], include_timing: bool = False) -> None:
    """Write the metrics series.

    The ``seconds`` column is zeroed unless ``include_timing`` is set, so a
    rerun with the same seed produces a byte-identical file; real elapsed
    time always lands in the manifest.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            max_sum = "nan" if row.max_sum is None else repr(row.max_sum)
            seconds = repr(row.seconds) if include_timing else "0.0"
            fh.write(
                f"{row.evaluations},{row.moqd_score!r},{row.global_hypervolume!r},"
                f"{max_sum},{row.coverage!r},{seconds}\n"
            )


def read_metrics_csv(path: str) -> list[MetricsRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected metrics header {header!r}")
        rows = []
        for line in fh:
            evals, moqd, ghv, max_sum, cov, secs = line.strip().split(",")
            parsed_max = float(max_sum)
            rows.append(
                MetricsRecord(
                    evaluations=int(evals),
                    moqd_score=float(moqd),
                    global_hypervolume=float(ghv),
                    max_sum=None if math.isnan(parsed_max) else parsed_max,
                    coverage=float(cov),
                    seconds=float(secs),
                )
            )
    return rows


def _canonical_json(value) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def config_hash(raw: dict) -> str:
    """Stable digest of a configuration tree, insensitive to key order."""
    return hashlib.sha256(_canonical_json(raw).encode()).hexdigest()[:16]


def version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.TimeoutExpired):
        pass
    return f"moqd-{__version__}"


def _emit_toml(raw: dict) -> str:
    """Serialize the two-level config tree back to TOML."""

    def literal(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (int, float)):
            return repr(v)
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(literal(x) for x in v) + "]"
        raise TypeError(f"cannot serialize {type(v).__name__} to TOML")

    lines = []
    for section, table in raw.items():
        lines.append(f"[{section}]")
        for key, value in table.items():
            lines.append(f"{key} = {literal(value)}")
        lines.append("")
    return "\n".join(lines)


def run_to_directory(resolved: ResolvedConfig, out_dir: str) -> RunResult:
    """Execute the configured run and persist metrics.csv, archive.jsonl,
    manifest.json and config.toml into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    result = run(resolved.algorithm_config, resolved.env, resolved.reference_point)
    elapsed = time.perf_counter() - t0

    metrics_path = os.path.join(out_dir, "metrics.csv")
    archive_path = os.path.join(out_dir, "archive.jsonl")
    config_path = os.path.join(out_dir, "config.toml")
    manifest_path = os.path.join(out_dir, "manifest.json")

    write_metrics_csv(metrics_path, result.metrics, include_timing=resolved.wall_clock_in_csv)
    result.archive.snapshot(archive_path)
    with open(config_path, "w", encoding="utf-8") as fh:
        fh.write(_emit_toml(resolved.raw))
    manifest = {
        "algorithm": resolved.algorithm_config.algorithm,
        "environment": resolved.raw["env"]["id"],
        "seed": resolved.algorithm_config.seed,
        "config_hash": config_hash(resolved.raw),
        "version": version_string(),
        "elapsed_seconds": elapsed,
        "outputs": {
            "metrics": os.path.basename(metrics_path),
            "archive": os.path.basename(archive_path),
            "config": os.path.basename(config_path),
            "manifest": os.path.basename(manifest_path),
        },
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result


# ------------------------------------------------------------- comparisons


def _metric_series(rows: list[MetricsRecord], metric: str) -> tuple[np.ndarray, np.ndarray]:
    evals = np.array([r.evaluations for r in rows])
    values = np.array(
        [getattr(r, metric) if getattr(r, metric) is not None else np.nan for r in rows]
    )
    return evals, values


def first_reach(evals: np.ndarray, values: np.ndarray, target: float) -> int | None:
    """Evaluation count at which the running best first meets ``target``."""
    best = np.maximum.accumulate(values)
    hits = np.flatnonzero(best >= target - 1e-12)
    return int(evals[hits[0]]) if len(hits) else None


def efficiency_ratio(
    curves_a: list[tuple[np.ndarray, np.ndarray]],
    curves_b: list[tuple[np.ndarray, np.ndarray]],
) -> float | None:
    """Data-efficiency of A over B: evaluations B needs over evaluations A
    needs to first reach the shared target min(final medians) on their
    median curves. Values above 1 mean A gets there with fewer evaluations;
    swapping the arguments inverts the ratio."""

    def median_curve(curves):
        grids = [tuple(e) for e, _ in curves]
        if len(set(grids)) != 1:
            raise ValueError("replication curves are not aligned on evaluation counts")
        evals = curves[0][0]
        return evals, np.median(np.stack([v for _, v in curves]), axis=0)

    evals_a, med_a = median_curve(curves_a)
    evals_b, med_b = median_curve(curves_b)
    target = min(med_a[-1], med_b[-1])
    t_a = first_reach(evals_a, med_a, target)
    t_b = first_reach(evals_b, med_b, target)
    if t_a is None or t_b is None or t_a == 0:
        return None
    return t_b / t_a


@dataclass(frozen=True)
class ComparisonRow:
    algorithm_a: str
    algorithm_b: str
    median_a: float
    median_b: float
    iqr_a: tuple[float, float]
    iqr_b: tuple[float, float]
    p_value: float
    p_adjusted: float
    efficiency: float | None


@dataclass(frozen=True)
class Comparison:
    metric: str
    seeds: tuple[int, ...]
    medians: dict[str, float]
    rows: list[ComparisonRow]

    def as_text(self) -> str:
        lines = [f"metric: {self.metric}   seeds: {list(self.seeds)}"]
        for name, med in self.medians.items():
            lines.append(f"  {name}: median {med:.6g}")
        header = f"{'pair':<34}{'p':>10}{'p(holm)':>10}{'efficiency':>12}"
        lines.append(header)
        for row in self.rows:
            eff = f"{row.efficiency:.3g}" if row.efficiency is not None else "n/a"
            lines.append(
                f"{row.algorithm_a + ' vs ' + row.algorithm_b:<34}"
                f"{row.p_value:>10.4g}{row.p_adjusted:>10.4g}{eff:>12}"
            )
        return "\n".join(lines)

    def as_csv(self) -> str:
        lines = [
            "metric,algorithm_a,algorithm_b,median_a,median_b,"
            "iqr_a_low,iqr_a_high,iqr_b_low,iqr_b_high,p,p_holm,efficiency"
        ]
        for r in self.rows:
            eff = "" if r.efficiency is None else repr(r.efficiency)
            lines.append(
                f"{self.metric},{r.algorithm_a},{r.algorithm_b},"
                f"{r.median_a!r},{r.median_b!r},"
                f"{r.iqr_a[0]!r},{r.iqr_a[1]!r},{r.iqr_b[0]!r},{r.iqr_b[1]!r},"
                f"{r.p_value!r},{r.p_adjusted!r},{eff}"
            )
        return "\n".join(lines) + "\n"


def _load_run_dir(path: str) -> tuple[str, int, list[MetricsRecord]]:
    manifest_path = os.path.join(path, "manifest.json")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    rows = read_metrics_csv(os.path.join(path, "metrics.csv"))
    return manifest["algorithm"], manifest["seed"], rows


def compare_runs(run_dirs: list[str], metric: str = "moqd_score") -> Comparison:
    """Pair replications by seed and compare algorithms on a metric.

    Directories holding the same (algorithm, seed) pair again are treated
    as a distinct group (suffix #2, #3, ...), so a run compared against an
    exact copy of itself yields p = 1 and efficiency 1.
    """
    if metric not in MetricsRecord.__dataclass_fields__:
        raise ValueError(f"unknown metric {metric!r}")
    groups: dict[str, dict[int, list[MetricsRecord]]] = {}
    for path in run_dirs:
        algorithm, seed, rows = _load_run_dir(path)
        name = algorithm
        while name in groups and seed in groups[name]:
            base, _, counter = name.partition("#")
            name = f"{base}#{int(counter or 1) + 1}"
        groups.setdefault(name, {})[seed] = rows

    seed_sets = {name: set(by_seed) for name, by_seed in groups.items()}
    common = set.intersection(*seed_sets.values())
    for name, seeds in seed_sets.items():
        missing = set.union(*seed_sets.values()) - seeds
        if missing:
            raise PairingError(f"{name} lacks seeds {sorted(missing)}; cannot pair")
    seeds = tuple(sorted(common))

    finals: dict[str, np.ndarray] = {}
    curves: dict[str, list] = {}
    for name, by_seed in groups.items():
        finals[name] = np.array([getattr(by_seed[s][-1], metric) for s in seeds])
        curves[name] = [_metric_series(by_seed[s], metric) for s in seeds]

    def paired_p(x, y):
        if np.array_equal(x, y):
            return 1.0  # degenerate: all differences zero
        if len(x) >= 5:
            return float(wilcoxon_signed_rank(x, y))
        return float("nan")  # too few replications for the signed-rank test

    names = sorted(groups)
    pairs = [(a, b) for i, a in enumerate(names) for b in names[i + 1 :]]
    p_values = [paired_p(finals[a], finals[b]) for a, b in pairs]
    defined = [p for p in p_values if not math.isnan(p)]
    adjusted_defined = iter(holm_bonferroni(defined) if defined else [])
    adjusted = [p if math.isnan(p) else next(adjusted_defined) for p in p_values]

    def iqr(x):
        return (float(np.percentile(x, 25)), float(np.percentile(x, 75)))

    rows = [
        ComparisonRow(
            algorithm_a=a,
            algorithm_b=b,
            median_a=float(np.median(finals[a])),
            median_b=float(np.median(finals[b])),
            iqr_a=iqr(finals[a]),
            iqr_b=iqr(finals[b]),
            p_value=p,
            p_adjusted=ph,
            efficiency=efficiency_ratio(curves[a], curves[b]),
        )
        for (a, b), p, ph in zip(pairs, p_values, adjusted)
    ]
    medians = {name: float(np.median(finals[name])) for name in names}
    return Comparison(metric=metric, seeds=seeds, medians=medians, rows=rows)
