"""Empirical false-alarm rate and power of the two-batch drift detector.

    python scripts/drift_calibration.py --runs 1000 --batch 500 --shift 3

Draws pairs of i.i.d. standard-normal batches (no change) and pairs whose
second batch is shifted by ``shift`` pooled standard deviations, and reports
how often each yields a drift, a warning, or nothing.
"""

import argparse
import time
from collections import Counter

import numpy as np

from kiera.adaptation import DriftDetector, DriftState


def rates(rng, runs, batch, shift, alpha, alpha_d, alpha_w):
    out = Counter()
    for _ in range(runs):
        a, b = rng.normal(size=batch), rng.normal(size=batch)
        if shift:
            b = b + shift * np.sqrt((a.var() + b.var()) / 2)
        out[DriftDetector(alpha, alpha_d, alpha_w).check(a, b)] += 1
    return {s.value: out[s] / runs for s in DriftState}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--runs", type=int, default=1000)
    p.add_argument("--power-runs", type=int, default=100)
    p.add_argument("--batch", type=int, default=500)
    p.add_argument("--shift", type=float, default=3.0)
    p.add_argument("--alpha", type=float, default=0.001)
    p.add_argument("--alpha-d", type=float, default=0.001)
    p.add_argument("--alpha-w", type=float, default=0.005)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    rng = np.random.default_rng(args.seed)
    levels = (args.alpha, args.alpha_d, args.alpha_w)
    t0 = time.perf_counter()
    null = rates(rng, args.runs, args.batch, 0.0, *levels)
    alt = rates(rng, args.power_runs, args.batch, args.shift, *levels)
    print(f"no change   ({args.runs} runs): {null}")
    print(f"{args.shift:g}-sigma shift ({args.power_runs} runs): {alt}")
    print(f"{time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
