"""Command-line entry point: ``wola run|sweep|bound-check|fig1``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import yaml

from .data import bundled_iris_path, load_csv_dataset
from .diagnostics import class_cosine_trace, objective_bound_check
from .experiment import ConfigError, ExperimentConfig, field_type, run_experiment, set_field, summarize
from .numerics import InvalidInputError
from .training import RoundRecord, TrainingAborted

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def run_config(config: ExperimentConfig, out_dir: Path, seeds=None) -> tuple[dict, dict[int, str]]:
    """Run every seed, writing ``seed_<k>.csv`` and ``summary.json`` to ``out_dir``.

    Rows are written as soon as a round finishes, so an aborted seed leaves
    its completed rounds behind. Returns the summary and the abort messages.
    """
    seeds = list(config.seeds if seeds is None else seeds)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(config.to_yaml(), encoding="utf-8")
    completed: dict[int, list[RoundRecord]] = {}
    aborted: dict[int, str] = {}
    for seed in seeds:
        with open(out_dir / f"seed_{seed}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(RoundRecord.CSV_FIELDS)

            written = []

            def emit(rec: RoundRecord) -> None:
                writer.writerow(rec.csv_row())
                written.append(rec.t)

            try:
                completed[seed] = run_experiment(config, seed, on_round=emit)
            except TrainingAborted as exc:
                # A non-finite round is recorded but never reaches the callback.
                for rec in exc.records[len(written) :]:
                    writer.writerow(rec.csv_row())
                aborted[seed] = str(exc)
    summary = summarize(completed) if completed else {"seeds": []}
    summary["aborted"] = {str(s): m for s, m in aborted.items()}
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary, aborted


def cmd_run(args) -> int:
    config = ExperimentConfig.load(args.config)
    if args.max_workers is not None:
        config = set_field(config, "max_workers", args.max_workers)
    out = Path(args.out or config.output)
    seeds = [args.seed] if args.seed is not None else None
    summary, aborted = run_config(config, out, seeds)
    for seed, msg in aborted.items():
        _err(f"seed {seed} aborted: {msg}")
    if "test_accuracy" in summary:
        acc, dis = summary["test_accuracy"], summary["gradient_dissimilarity"]
        print(
            f"accuracy {acc['mean']:.4f} (sd {acc['sd']:.4f})  "
            f"dissimilarity {dis['mean']:.4g} (sd {dis['sd']:.4g})  -> {out}"
        )
    return EXIT_FAILED if aborted else EXIT_OK


def _parse_values(text: str) -> list:
    parts = [p.strip() for p in text.split(",")]
    if not text.strip() or any(p == "" for p in parts):
        raise ConfigError("--values", "need a non-empty comma-separated list")
    return [yaml.safe_load(p) for p in parts]


def _cell(job):
    config, out_dir = job
    summary, aborted = run_config(config, out_dir)
    return summary, aborted


SWEEP_FIELDS = ("value", "test_accuracy_mean", "test_accuracy_sd", "dissimilarity_mean", "dissimilarity_sd", "status")


def cmd_sweep(args) -> int:
    base = ExperimentConfig.load(args.config)
    field_type(args.axis)
    values = _parse_values(args.values)
    cells = [set_field(base, args.axis, v) for v in values]
    root = Path(args.out or base.output)
    jobs = [(cfg, root / f"{args.axis}={v}") for cfg, v in zip(cells, values)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_cell, jobs))
    else:
        results = [_cell(j) for j in jobs]
    root.mkdir(parents=True, exist_ok=True)
    failed = False
    with open(root / "sweep_summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("axis",) + SWEEP_FIELDS)
        for v, (summary, aborted) in zip(values, results):
            failed |= bool(aborted)
            acc = summary.get("test_accuracy", {"mean": float("nan"), "sd": float("nan")})
            dis = summary.get("gradient_dissimilarity", {"mean": float("nan"), "sd": float("nan")})
            writer.writerow(
                [args.axis, v, repr(acc["mean"]), repr(acc["sd"]), repr(dis["mean"]), repr(dis["sd"]),
                 "aborted" if aborted else "ok"]
            )
            print(f"{args.axis}={v}: accuracy {acc['mean']:.4f}  dissimilarity {dis['mean']:.4g}")
    return EXIT_FAILED if failed else EXIT_OK


def cmd_bound_check(args) -> int:
    r = objective_bound_check(args.n, args.f, args.trials, args.seed, num_classes=args.classes)
    print(f"n={r.n} f={r.f} trials={r.trials}")
    print(f"worst attack deviation/bound: min {r.worst_ratio_min!r} max {r.worst_ratio_max!r}")
    print(f"random adversaries: max deviation/bound {r.max_random_ratio!r}, violations {r.violations}")
    print("OK" if r.ok else "FAILED")
    return EXIT_OK if r.ok else EXIT_FAILED


def write_trace(trace, class_names, path: Path) -> None:
    pairs = list(trace[0].cosines)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "test_accuracy"] + [f"cos_{class_names[a]}_{class_names[b]}" for a, b in pairs])
        for s in trace:
            writer.writerow([s.step, repr(s.loss), repr(s.test_accuracy)] + [repr(s.cosines[p]) for p in pairs])


def cmd_fig1(args) -> int:
    ds = load_csv_dataset(args.data or bundled_iris_path(), args.label_column)
    trace = class_cosine_trace(ds, steps=args.steps, lr=args.lr, hidden_dim=args.hidden, seed=args.seed)
    names = ds.class_names or tuple(str(c) for c in range(ds.num_classes))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trace(trace, names, out)
    print(f"final test accuracy {trace[-1].test_accuracy:.4f}")
    for a, b in trace[0].cosines:
        low = min(s.cosines[(a, b)] for s in trace)
        print(f"min cos({names[a]}, {names[b]}) = {low:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wola", description="Byzantine-robust training under label skew.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment config over its seeds")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, help="run only this seed")
    r.add_argument("--out", help="output directory (default: config 'output')")
    r.add_argument("--max-workers", type=int, help="threads for the honest phase of each round")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a config once per value of one field")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", required=True, help="dotted field name, e.g. f or attack.name")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--out", help="output directory (default: config 'output')")
    s.add_argument("--jobs", type=int, default=1, help="cells run in parallel processes")
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bound-check", help="check the objective-attack deviation bound")
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--f", type=int, required=True)
    b.add_argument("--trials", type=int, default=1000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--classes", type=int, default=10)
    b.set_defaults(func=cmd_bound_check)

    g = sub.add_parser("fig1", help="class-gradient cosine trace on an Iris-format CSV")
    g.add_argument("--data", help="CSV path (default: bundled Iris)")
    g.add_argument("--out", required=True)
    g.add_argument("--label-column", type=int, default=-1)
    g.add_argument("--steps", type=int, default=300)
    g.add_argument("--lr", type=float, default=0.5)
    g.add_argument("--hidden", type=int, default=8)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_fig1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(f"invalid config: {exc}")
        return EXIT_USAGE
    except (InvalidInputError, OSError, yaml.YAMLError) as exc:
        _err(str(exc))
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
