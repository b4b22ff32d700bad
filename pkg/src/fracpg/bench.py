"""Experiment harness: per-episode metrics, statistics and multi-seed suites."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .envs import make_env
from .trainer import Algo, TrainConfig, train

__all__ = [
    "MetricsRecord",
    "METRIC_COLUMNS",
    "write_metrics_csv",
    "read_metrics_csv",
    "metrics_csv_text",
    "episodes_to_threshold",
    "WelchResult",
    "welch_t",
    "variance_decay_fit",
    "bias_variance_estimate",
    "confidence_halfwidth",
    "CellResult",
    "SuiteResult",
    "run_cells",
    "run_suite",
    "aggregate",
    "alpha_sweep",
    "ABLATIONS",
]

METRIC_COLUMNS = ("episode", "steps", "return", "grad_var_window", "max_abs_frac_delta", "clip_events", "wall_ms")


@dataclass(frozen=True)
class MetricsRecord:
    episode: int
    steps: int
    ret: float
    grad_var_window: float
    max_abs_frac_delta: float
    clip_events: int
    wall_ms: float

    def as_row(self) -> list[str]:
        return [
            str(self.episode),
            str(self.steps),
            repr(float(self.ret)),
            repr(float(self.grad_var_window)),
            repr(float(self.max_abs_frac_delta)),
            str(self.clip_events),
            repr(float(self.wall_ms)),
        ]


def metrics_csv_text(rows: Iterable[MetricsRecord], header: dict | None = None) -> str:
    """Render rows as CSV; ``header`` items become leading ``#`` comment lines.

    Floats are written with ``repr`` so a read/write round trip is exact.
    """
    buf = io.StringIO()
    for k, v in (header or {}).items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow(r.as_row())
    return buf.getvalue()


def write_metrics_csv(path, rows: Iterable[MetricsRecord], header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(metrics_csv_text(rows, header))


def read_metrics_csv(path) -> tuple[list[MetricsRecord], dict]:
    """Inverse of :func:`write_metrics_csv`; returns ``(rows, header)``."""
    header: dict = {}
    rows = []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            header[k] = v
        elif line:
            body.append(line)
    reader = csv.reader(body)
    cols = next(reader)
    if tuple(cols) != METRIC_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {cols}")
    for rec in reader:
        rows.append(
            MetricsRecord(int(rec[0]), int(rec[1]), float(rec[2]), float(rec[3]), float(rec[4]), int(rec[5]), float(rec[6]))
        )
    return rows, header


def episodes_to_threshold(returns: Sequence[float], threshold: float, window: int = 10) -> int | None:
    """First episode (1-based) whose trailing ``window``-episode mean reaches ``threshold``."""
    r = np.asarray(returns, dtype=np.float64)
    if r.size < window:
        return None
    means = np.convolve(r, np.ones(window) / window, mode="valid")
    hits = np.flatnonzero(means >= threshold)
    return int(hits[0]) + window if hits.size else None


@dataclass(frozen=True)
class WelchResult:
    t: float
    dof: float
    p: float  # two-sided

    @property
    def p_less(self) -> float:
        """One-sided p for the alternative mean(a) < mean(b)."""
        return self.p / 2 if self.t < 0 else 1.0 - self.p / 2

    @property
    def p_greater(self) -> float:
        return self.p / 2 if self.t > 0 else 1.0 - self.p / 2


def welch_t(sample_a: Sequence[float], sample_b: Sequence[float]) -> WelchResult:
    """Welch's unequal-variance t-test with Satterthwaite degrees of freedom."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two values")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    if va + vb == 0.0:
        if diff == 0.0:
            return WelchResult(0.0, float(a.size + b.size - 2), 1.0)
        raise ValueError("both samples have zero variance but different means")
    t = diff / math.sqrt(va + vb)
    dof = (va + vb) ** 2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    p = 2.0 * stats.t.sf(abs(t), dof)
    return WelchResult(float(t), float(dof), float(min(max(p, 0.0), 1.0)))


def variance_decay_fit(series) -> tuple[float, float]:
    """Log-log slope of variance against time over the second half of a series.

    ``series`` is a sequence of ``(t, var)`` pairs with ``t > 0`` and
    ``var > 0``. Returns ``(slope, r_squared)``.
    """
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 20:
        raise ValueError("need at least 20 (t, var) pairs")
    arr = arr[np.argsort(arr[:, 0], kind="stable")]
    arr = arr[arr.shape[0] // 2 :]
    if (arr <= 0).any():
        raise ValueError("times and variances must be positive")
    x, y = np.log(arr[:, 0]), np.log(arr[:, 1])
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    if abs(slope) < 1e-12:
        slope = 0.0
    return float(slope), r2


def bias_variance_estimate(gradient_samples, reference) -> tuple[float, float]:
    """Split sampled gradients into squared bias and variance about the mean."""
    g = np.asarray(gradient_samples, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] < 2:
        raise ValueError("need at least two gradient samples")
    mean = g.mean(axis=0)
    bias_sq = float(np.sum((mean - np.asarray(reference, dtype=np.float64)) ** 2))
    variance = float(np.mean(np.sum((g - mean) ** 2, axis=1)))
    return bias_sq, variance


def confidence_halfwidth(values: Sequence[float]) -> float:
    """Normal-approximation 95% half-width, ``1.96 sd / sqrt(n)``."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return float("nan")
    return float(1.96 * v.std(ddof=1) / math.sqrt(v.size))


# --------------------------------------------------------------------- suites


ABLATIONS = {
    "clipping_off": {"clipping_off": True},
    "recursion_off": {"recursion_off": True},
    "minibatch_off": {"minibatch_off": True},
}


@dataclass
class CellResult:
    """All seeds of one (label, config) cell."""

    label: str
    config: TrainConfig
    seeds: list[int]
    runs: list[list[MetricsRecord]]
    errors: list[str] = field(default_factory=list)
    bound_violations: int = 0

    def returns(self, i: int) -> np.ndarray:
        return np.array([r.ret for r in self.runs[i]])

    def episodes_to_threshold(self, threshold: float) -> list[int | None]:
        return [episodes_to_threshold(self.returns(i), threshold) for i in range(len(self.runs))]

    def final_third_grad_var(self) -> np.ndarray:
        """Per-seed mean of the windowed gradient variance over the last third."""
        out = []
        for rows in self.runs:
            v = np.array([r.grad_var_window for r in rows])
            out.append(v[len(v) - max(len(v) // 3, 1) :].mean() if len(v) else np.nan)
        return np.array(out)

    def final_return(self, last: int = 10) -> np.ndarray:
        return np.array([self.returns(i)[-last:].mean() if len(self.runs[i]) else np.nan for i in range(len(self.runs))])


def median_episodes(values: list[int | None], budget: int) -> float:
    """Median with unsolved runs counted as ``budget + 1``."""
    return float(np.median([budget + 1 if v is None else v for v in values]))


@dataclass
class SuiteResult:
    env: str
    threshold: float
    cells: dict[str, CellResult]
    comparator: str | None = None

    def summary_rows(self) -> list[dict]:
        rows = []
        comp = self.cells.get(self.comparator) if self.comparator else None
        for label, cell in self.cells.items():
            ett = cell.episodes_to_threshold(self.threshold)
            budget = cell.config.max_episodes
            gv = cell.final_third_grad_var()
            fr = cell.final_return()
            row = {
                "cell": label,
                "algo": cell.config.algo.value,
                "alpha": cell.config.alpha,
                "seeds": len(cell.runs),
                "solved": sum(v is not None for v in ett),
                "median_episodes_to_threshold": median_episodes(ett, budget),
                "final_return_mean": float(np.nanmean(fr)),
                "final_return_ci95": confidence_halfwidth(fr[~np.isnan(fr)]),
                "final_third_grad_var_mean": float(np.nanmean(gv)),
                "final_third_grad_var_ci95": confidence_halfwidth(gv[~np.isnan(gv)]),
                "errors": len(cell.errors),
            }
            if comp is not None and comp is not cell:
                res = welch_t(gv, comp.final_third_grad_var())
                row.update(
                    variance_ratio=float(np.nanmean(gv) / np.nanmean(comp.final_third_grad_var())),
                    welch_t=res.t,
                    welch_dof=res.dof,
                    welch_p_less=res.p_less,
                )
            rows.append(row)
        return rows

    def variance_ratio_series(self, label: str) -> np.ndarray:
        """Seed-mean windowed gradient variance of ``label`` over the comparator, per episode."""
        num = _mean_series(self.cells[label], "grad_var_window")
        den = _mean_series(self.cells[self.comparator], "grad_var_window")
        n = min(len(num), len(den))
        with np.errstate(divide="ignore", invalid="ignore"):
            return num[:n] / den[:n]

    def to_csv(self, path) -> None:
        rows = self.summary_rows()
        cols: list[str] = []
        for r in rows:
            cols.extend(k for k in r if k not in cols)
        with open(path, "w", newline="") as fh:
            fh.write(f"# env={self.env} threshold={self.threshold} comparator={self.comparator}\n")
            w = csv.DictWriter(fh, cols, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)

    def plot_data_csv(self, path) -> None:
        """Seed-mean return and gradient variance per episode, one column pair per cell."""
        series = {}
        for label, cell in self.cells.items():
            series[f"{label}:return"] = _mean_series(cell, "ret")
            series[f"{label}:grad_var"] = _mean_series(cell, "grad_var_window")
        n = max((len(s) for s in series.values()), default=0)
        with open(path, "w", newline="") as fh:
            fh.write(f"# env={self.env} seed-mean series\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode", *series])
            for i in range(n):
                w.writerow([i + 1, *(repr(float(s[i])) if i < len(s) else "" for s in series.values())])


def _mean_series(cell: CellResult, attr: str) -> np.ndarray:
    runs = [np.array([getattr(r, attr) for r in rows]) for rows in cell.runs if rows]
    if not runs:
        return np.array([])
    n = min(len(r) for r in runs)
    return np.mean([r[:n] for r in runs], axis=0)


def _run_one(config: TrainConfig):
    try:
        art = train(config)
        err = art.abort_reason if art.aborted else ""
        return art.rows, err, art.bound_violations
    except Exception as exc:  # a failing cell must not take the suite down
        return [], f"{type(exc).__name__}: {exc}", 0


def run_cells(
    cells: dict[str, TrainConfig], seeds: Sequence[int], jobs: int = 1
) -> dict[str, CellResult]:
    """Run every (cell, seed) pair; results do not depend on ``jobs``."""
    tasks = [(label, seed, replace(cfg, seed=seed)) for label, cfg in cells.items() for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_one, [t[2] for t in tasks]))
    else:
        outputs = [_run_one(t[2]) for t in tasks]
    results = {label: CellResult(label, cfg, list(seeds), []) for label, cfg in cells.items()}
    for (label, seed, _), (rows, err, viol) in zip(tasks, outputs):
        cell = results[label]
        cell.runs.append(rows)
        cell.bound_violations += viol
        if err:
            cell.errors.append(f"seed {seed}: {err}")
    return results


def run_suite(
    env: str,
    algos: Sequence[str | Algo],
    seeds: Sequence[int],
    base: TrainConfig | None = None,
    *,
    ablations: Sequence[str] = (),
    comparator: str | None = "a2c",
    jobs: int = 1,
) -> SuiteResult:
    """Independent runs per (algorithm or ablation, seed), aggregated.

    Ablation names come from :data:`ABLATIONS` and are applied to FPG.
    """
    if len(seeds) < 2:
        raise ValueError("a suite needs at least two seeds")
    from .trainer import default_config

    base = base or default_config(env)
    base = replace(base, env=make_env(env).spec.name)
    cells: dict[str, TrainConfig] = {}
    for algo in algos:
        algo = Algo(algo)
        cells[algo.value] = replace(base, algo=algo)
    for name in ablations:
        cells[f"fpg_{name}"] = replace(base, algo=Algo.FPG, **ABLATIONS[name])
    if comparator not in cells:
        comparator = None
    results = run_cells(cells, seeds, jobs)
    return SuiteResult(make_env(env).spec.name, make_env(env).spec.solved_threshold, results, comparator)


def aggregate(run_csvs: dict[str, Sequence[str | os.PathLike]], env: str, comparator: str | None = None) -> SuiteResult:
    """Rebuild a :class:`SuiteResult` from stored per-run CSV files.

    ``run_csvs`` maps a cell label to its per-seed CSV paths. The config is
    recovered from the CSV header comments.
    """
    from .config import config_from_header

    cells = {}
    for label, paths in run_csvs.items():
        runs, seeds, cfg = [], [], None
        for p in paths:
            rows, header = read_metrics_csv(p)
            cfg = config_from_header(header)
            runs.append(rows)
            seeds.append(cfg.seed)
        cells[label] = CellResult(label, cfg, seeds, runs)
    spec = make_env(env).spec
    return SuiteResult(spec.name, spec.solved_threshold, cells, comparator)


def alpha_sweep(
    env: str,
    alphas: Sequence[float],
    seeds: Sequence[int],
    base: TrainConfig | None = None,
    *,
    jobs: int = 1,
) -> list[dict]:
    """One row per alpha: median episodes-to-threshold and mean final return."""
    if len(seeds) < 2:
        raise ValueError("a sweep needs at least two seeds")
    from .trainer import default_config

    base = base or default_config(env)
    base = replace(base, env=make_env(env).spec.name, algo=Algo.FPG)
    cells = {f"alpha={a:g}": replace(base, alpha=float(a)) for a in alphas}
    results = run_cells(cells, seeds, jobs)
    threshold = make_env(env).spec.solved_threshold
    rows = []
    for a, (label, cell) in zip(alphas, results.items()):
        ett = cell.episodes_to_threshold(threshold)
        fr = cell.final_return()
        rows.append(
            {
                "alpha": float(a),
                "seeds": len(seeds),
                "solved": sum(v is not None for v in ett),
                "median_episodes_to_threshold": median_episodes(ett, base.max_episodes),
                "final_return_mean": float(np.nanmean(fr)) if len(fr) else float("nan"),
                "final_return_ci95": confidence_halfwidth(fr[~np.isnan(fr)]),
                "errors": len(cell.errors),
            }
        )
    return rows
