"""``fracpg`` command line: kernel-check, train, bench and sweep.

Exit codes: 0 ok, 1 usage or config error, 2 numerical abort during
training, 3 kernel-check acceptance failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import bench, frac_td
from .config import ConfigError, RunManifest, header_for, load_config
from .envs import ENV_NAMES, make_env
from .policy import save_checkpoint
from .trainer import Algo, TrainConfig, default_config, train

log = logging.getLogger("fracpg")

OUT_ENV_VAR = "FRACPG_OUT"
EXIT_OK, EXIT_USAGE, EXIT_ABORT, EXIT_CHECK = 0, 1, 2, 3
O1_TIMING_LIMIT = 1.2
NAIVE_GROWTH_MIN = 5.0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; usage errors here are 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV_VAR, "runs"))


def _alpha(text: str) -> float:
    try:
        a = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < a < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {a}")
    return a


def _positive_int(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def parse_alpha_grid(text: str) -> list[float]:
    """``start:stop:step`` (stop inclusive) or a comma list, each in (0, 1)."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError("alpha grid must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise argparse.ArgumentTypeError("alpha grid needs step > 0 and stop >= start")
        n = int(round((stop - start) / step)) + 1
        values = [round(start + i * step, 10) for i in range(n) if start + i * step <= stop + 1e-9]
    else:
        values = [float(p) for p in text.split(",") if p.strip()]
    for v in values:
        _alpha(str(v))
    if not values:
        raise argparse.ArgumentTypeError("empty alpha grid")
    return values


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fracpg", description="Fractional policy gradients: kernel checks, training and benchmarks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    k = sub.add_parser("kernel-check", help="recursion fidelity and per-step timing report")
    k.add_argument("--alpha", type=_alpha, required=True)
    k.add_argument("--steps", type=int, default=10_000, help="horizon (>= 100)")
    k.add_argument("--seeds", type=_positive_int, default=100)
    k.add_argument("--window", type=_positive_int, default=64, help="FIR window length")
    k.add_argument("--out", type=Path, default=None, help="report CSV (default: $FRACPG_OUT/kernel_check.csv)")

    t = sub.add_parser("train", help="one training run from a config file")
    t.add_argument("--config", type=Path, required=True)
    t.add_argument("--seed", type=int, default=None, help="overrides the config's seed")
    t.add_argument("--out", type=Path, default=None, help="output directory (default: $FRACPG_OUT)")

    b = sub.add_parser("bench", help="multi-seed comparison suite")
    b.add_argument("--env", choices=ENV_NAMES, required=True)
    b.add_argument("--algos", default="fpg,a2c,reinforce", help="comma list of fpg, a2c, reinforce, ppo_lite")
    b.add_argument("--seeds", type=_positive_int, default=20, help="number of seeds (>= 2)")
    b.add_argument("--first-seed", type=int, default=0)
    b.add_argument("--config", type=Path, default=None, help="base config; algo and seed are overridden")
    b.add_argument("--episodes", type=_positive_int, default=None, help="override max_episodes")
    b.add_argument("--ablations", default="", help=f"comma list from {', '.join(bench.ABLATIONS)}")
    b.add_argument("--comparator", default="a2c")
    b.add_argument("--jobs", type=_positive_int, default=1)
    b.add_argument("--out", type=Path, default=None)

    s = sub.add_parser("sweep", help="FPG over a grid of alpha values")
    s.add_argument("--env", choices=ENV_NAMES, required=True)
    s.add_argument("--alpha", type=parse_alpha_grid, required=True, help="start:stop:step or comma list")
    s.add_argument("--seeds", type=_positive_int, default=10)
    s.add_argument("--first-seed", type=int, default=0)
    s.add_argument("--config", type=Path, default=None)
    s.add_argument("--episodes", type=_positive_int, default=None)
    s.add_argument("--jobs", type=_positive_int, default=1)
    s.add_argument("--out", type=Path, default=None)
    return p


def _outdir(path: Path | None) -> Path:
    out = path if path is not None else default_out_root()
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def cmd_kernel_check(args) -> int:
    if args.steps < 100:
        print(f"warning: --steps {args.steps} is below the minimum horizon of 100; nothing checked", file=sys.stderr)
        return EXIT_OK
    out = args.out if args.out is not None else _outdir(None) / "kernel_check.csv"
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    report = frac_td.kernel_fidelity_report(args.alpha, args.steps, args.seeds, fir_window=args.window)
    report.to_csv(out)
    clipped = frac_td.kernel_fidelity_report(
        args.alpha, args.steps, min(args.seeds, 10), clipping_enabled=True, fir_window=args.window, timing=False
    )
    default_name = frac_td._variant_name(frac_td.MuVariant.THEOREM, frac_td.EtaVariant.GAMMA_RECIPROCAL)
    rec_ratio = report.timing_ratio(default_name)
    naive_ratio = report.timing_ratio("naive")
    target = -(args.alpha + 0.5)
    print(f"alpha={args.alpha} steps={args.steps} seeds={args.seeds} -> {out}")
    for name, slope in report.slopes.items():
        print(f"  {name:<28} error slope {slope:+.3f}   final error {report.errors[name][-1]:.3e}")
    print(f"  best variant {report.best_variant}: slope {report.best_slope:+.3f} (target <= {target:+.2f})")
    print(f"  recursive time ratio (last/first decile) {rec_ratio:.2f} (limit {O1_TIMING_LIMIT})")
    print(f"  naive time ratio {naive_ratio:.2f} (must exceed {NAIVE_GROWTH_MIN})")
    print(f"  clipping bound violations {clipped.clip_violations}")
    failed = []
    if rec_ratio > O1_TIMING_LIMIT:
        failed.append("recursive per-step time grows with t")
    if naive_ratio <= NAIVE_GROWTH_MIN:
        failed.append("naive oracle does not show O(t) growth")
    if clipped.clip_violations:
        failed.append("clipping bound violated")
    if report.best_slope > target:
        print("  note: error decay slope is above the target; see README, Known results")
    if failed:
        print("FAIL: " + "; ".join(failed), file=sys.stderr)
        return EXIT_CHECK
    print("OK")
    return EXIT_OK


def _write_run(out: Path, config: TrainConfig, art, source: str = "") -> None:
    header = header_for(config)
    bench.write_metrics_csv(out / "metrics.csv", art.rows, header)
    save_checkpoint(out / "checkpoint.txt", art.policy, art.value)
    RunManifest(config, {"metrics": "metrics.csv"}, config_source=source).write(out / "manifest.cfg")


def cmd_train(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    out = _outdir(args.out)
    log.info("training %s on %s, seed %d, %d episodes", config.algo.value, config.env, config.seed, config.max_episodes)
    art = train(config)
    _write_run(out, config, art, str(args.config))
    returns = art.returns
    last = returns[-10:].mean() if len(returns) else float("nan")
    ett = bench.episodes_to_threshold(returns, make_env(config.env).spec.solved_threshold) if len(returns) else None
    print(f"{len(art.rows)} episodes, last-10 mean return {last:.1f}, episodes to threshold {ett}; wrote {out}")
    if art.bound_violations:
        print(f"warning: {art.bound_violations} fractional TD-error bound violations", file=sys.stderr)
    if art.aborted:
        print(f"numerical abort: {art.abort_reason} (last finite parameters saved)", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def _base_config(args) -> TrainConfig:
    base = load_config(args.config) if args.config else default_config(args.env)
    base = replace(base, env=make_env(args.env).spec.name)
    if args.episodes:
        base = replace(base, max_episodes=args.episodes)
    return base


def _seeds(args) -> list[int]:
    if args.seeds < 2:
        raise UsageError("at least two seeds are needed for statistics")
    return list(range(args.first_seed, args.first_seed + args.seeds))


def _write_cell_runs(out: Path, suite_cells: dict) -> int:
    aborted = 0
    for label, cell in suite_cells.items():
        d = out / "runs" / label
        d.mkdir(parents=True, exist_ok=True)
        for seed, rows in zip(cell.seeds, cell.runs):
            bench.write_metrics_csv(d / f"seed{seed}.csv", rows, header_for(replace(cell.config, seed=seed)))
        for err in cell.errors:
            print(f"warning: {label} {err}", file=sys.stderr)
        aborted += sum("non-finite" in e for e in cell.errors)
    return aborted


def cmd_bench(args) -> int:
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    try:
        algos = [Algo(a) for a in algos]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ablations = [a.strip() for a in args.ablations.split(",") if a.strip()]
    unknown = [a for a in ablations if a not in bench.ABLATIONS]
    if unknown:
        raise UsageError(f"unknown ablation(s): {', '.join(unknown)}")
    base, seeds, out = _base_config(args), _seeds(args), _outdir(args.out)
    suite = bench.run_suite(args.env, algos, seeds, base, ablations=ablations, comparator=args.comparator, jobs=args.jobs)
    suite.to_csv(out / "summary.csv")
    suite.plot_data_csv(out / "plot_data.csv")
    RunManifest(base, {"metrics": "runs/"}, config_source=str(args.config or "")).write(out / "manifest.cfg")
    aborted = _write_cell_runs(out, suite.cells)
    for row in suite.summary_rows():
        extra = f"  var ratio {row['variance_ratio']:.3f}  Welch p(less) {row['welch_p_less']:.3g}" if "variance_ratio" in row else ""
        print(
            f"{row['cell']:<22} solved {row['solved']}/{row['seeds']}  median episodes "
            f"{row['median_episodes_to_threshold']:.0f}  final return {row['final_return_mean']:.1f}{extra}"
        )
    print(f"wrote {out / 'summary.csv'}")
    return EXIT_ABORT if aborted else EXIT_OK


def cmd_sweep(args) -> int:
    base, seeds, out = _base_config(args), _seeds(args), _outdir(args.out)
    rows = bench.alpha_sweep(args.env, args.alpha, seeds, base, jobs=args.jobs)
    with open(out / "sweep.csv", "w", newline="") as fh:
        fh.write(f"# env={base.env} seeds={len(seeds)} first_seed={seeds[0]} max_episodes={base.max_episodes}\n")
        w = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    RunManifest(replace(base, algo=Algo.FPG), {"metrics": "sweep.csv"}, config_source=str(args.config or "")).write(
        out / "manifest.cfg"
    )
    for r in rows:
        print(
            f"alpha {r['alpha']:.3f}: solved {r['solved']}/{r['seeds']}, median episodes "
            f"{r['median_episodes_to_threshold']:.0f}, final return {r['final_return_mean']:.1f}"
        )
    print(f"wrote {out / 'sweep.csv'}")
    return EXIT_OK


_COMMANDS = {"kernel-check": cmd_kernel_check, "train": cmd_train, "bench": cmd_bench, "sweep": cmd_sweep}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"fracpg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
