"""Command line entry point: ``kiera run | metrics | report``.

Exit codes: 0 success, 1 run failure, 2 usage error (bad flags, missing
dataset, unreadable config).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config, parse_config
from .data import load_mnist, make_tasks
from .protocol import load_records, run_protocol

log = logging.getLogger("kiera")

METRIC_COLUMNS = ["BWT", "FWT", "TaskAcc", "PreqAcc"]
STRUCTURE_COLUMNS = ["NoN", "NoL", "NoC", "NoM"]


class UsageError(Exception):
    pass


def _run_one(args_tuple):
    dataset, variant, seed, cfg, train_per_task, test_per_task, out = args_tuple
    ds = load_mnist(dataset)
    stream = make_tasks(ds, variant, seed, train_per_task, test_per_task)
    rec = run_protocol(stream, cfg)
    path = Path(out) / f"{variant}_seed{seed}.jsonl"
    rec.write_jsonl(path)
    return str(path), rec.summary, rec.structure


def cmd_run(args) -> int:
    if not Path(args.dataset).is_dir():
        raise UsageError(f"dataset directory not found: {args.dataset}")
    try:
        cfg = load_config(args.config) if args.config else parse_config("")
    except (OSError, ConfigError) as exc:
        raise UsageError(f"config: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [args.seed_base + i for i in range(args.seeds)]
    jobs = []
    for s in seeds:
        seeded = parse_config("", **{**cfg.__dict__, "seed": s})
        jobs.append((args.dataset, args.variant, s, seeded, args.train_per_task, args.test_per_task, out))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    for path, summary, structure in results:
        print(f"{path}: {json.dumps({**summary, **structure})}")
    write_report(load_records([r[0] for r in results]), out)
    print(f"summary written to {out / 'summary.csv'}")
    return 0


def cmd_metrics(args) -> int:
    records = load_records(args.records)
    if not records:
        raise UsageError("no run records found")
    for rec in records:
        print(json.dumps({"variant": rec.variant, "seed": rec.seed, **rec.compute_metrics()}))
    return 0


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_report(records, out: Path) -> tuple[Path, Path]:
    out.mkdir(parents=True, exist_ok=True)
    by_variant: dict[str, list] = {}
    for rec in records:
        by_variant.setdefault(rec.variant, []).append(rec)

    summary_path = out / "summary.csv"
    with open(summary_path, "w", newline="") as f:
        w = csv.writer(f)
        header = ["variant", "seeds"]
        for col in METRIC_COLUMNS + STRUCTURE_COLUMNS:
            header += [f"{col}_mean", f"{col}_std"]
        w.writerow(header)
        for variant, recs in sorted(by_variant.items()):
            row = [variant, len(recs)]
            ms = [r.compute_metrics() for r in recs]
            for col in METRIC_COLUMNS:
                vals = [m[col] for m in ms if m[col] is not None]
                row += [_fmt(np.mean(vals)) if vals else "", _fmt(np.std(vals)) if vals else ""]
            for col in STRUCTURE_COLUMNS:
                vals = [r.structure[col] for r in recs]
                row += [_fmt(np.mean(vals)), _fmt(np.std(vals))]
            w.writerow(row)

    curve_path = out / "memory_curve.csv"
    with open(curve_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["variant", "step", "task", "batch", "memory_mean", "memory_std", "buffer_mean", "buffer_std"])
        for variant, recs in sorted(by_variant.items()):
            steps = min(len(r.batches) for r in recs)
            for s in range(steps):
                mem = [r.batches[s]["memory_size"] for r in recs]
                buf = [r.batches[s]["buffer_size"] for r in recs]
                b0 = recs[0].batches[s]
                w.writerow([variant, s, b0["task"], b0["batch"], _fmt(np.mean(mem)), _fmt(np.std(mem)),
                            _fmt(np.mean(buf)), _fmt(np.std(buf))])
    return summary_path, curve_path


def cmd_report(args) -> int:
    records = load_records(args.records)
    if not records:
        raise UsageError("no run records found")
    summary, curve = write_report(records, Path(args.out))
    print(Path(summary).read_text(), end="")
    print(f"memory curve: {curve}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kiera", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the continual protocol for one or more seeds")
    r.add_argument("--dataset", required=True, help="directory with the four MNIST IDX files (.gz allowed)")
    r.add_argument("--variant", choices=["permuted", "rotated", "split"], required=True)
    r.add_argument("--seeds", type=int, default=1, help="number of seeds")
    r.add_argument("--seed-base", type=int, default=0)
    r.add_argument("--config", help="key = value config file")
    r.add_argument("--out", default="runs")
    r.add_argument("--train-per-task", type=int, default=None)
    r.add_argument("--test-per-task", type=int, default=None)
    r.add_argument("--jobs", type=int, default=1, help="seeds run in parallel processes")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("metrics", help="recompute metrics from run records")
    m.add_argument("records", nargs="+", help="record files or directories")
    m.set_defaults(func=cmd_metrics)

    rep = sub.add_parser("report", help="aggregate seeds into summary tables and a memory curve")
    rep.add_argument("records", nargs="+")
    rep.add_argument("--out", default="report")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on bad usage
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"kiera: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("run failed")
        print(f"kiera: run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
