"""Desk-scale split-MNIST run: 2000 training samples per task, full test sets.

    python scripts/run_smnist_desk.py --dataset /path/to/mnist --seeds 0 1 2 --out runs/smnist

Writes one JSON-lines record per seed plus ``summary.csv`` and
``memory_curve.csv``, and prints the accuracy matrix and metrics.
"""

import argparse
import logging
from pathlib import Path

import numpy as np

from kiera.bench.cli import write_report
from kiera.bench.data import load_mnist, make_tasks
from kiera.bench.protocol import run_protocol
from kiera.learner import LearnerConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--dataset", default="/root/data/mnist")
    p.add_argument("--variant", default="split", choices=["split", "permuted", "rotated"])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--train-per-task", type=int, default=2000)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--out", default="runs/smnist_desk")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    ds = load_mnist(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for seed in args.seeds:
        stream = make_tasks(ds, args.variant, seed, train_per_task=args.train_per_task)
        rec = run_protocol(stream, LearnerConfig(seed=seed, epochs=args.epochs))
        rec.write_jsonl(out / f"{args.variant}_seed{seed}.jsonl")
        records.append(rec)
        print(f"seed {seed}: {rec.elapsed:.0f}s")
        print(np.round(rec.R, 3))
        print({k: (None if v is None else round(v, 4)) for k, v in rec.summary.items()}, rec.structure)
    summary, curve = write_report(records, out)
    print(summary.read_text(), end="")
    print(f"memory curve: {curve}")


if __name__ == "__main__":
    main()
