"""Coverage of bootstrap intervals for conditional quantiles on POT data.

Each replicate draws a fresh dataset and one test point, so coverage events
are independent.  Example: python scripts/quantile_coverage.py --reps 100
"""
import argparse

import numpy as np

from evtkit import marginal
from evtkit.dataset import Dataset
from evtkit.numopt import make_rng, spawn
from evtkit.synthetic import PotTruth, pot_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--B", type=int, default=200)
    ap.add_argument("--q", type=float, default=0.99)
    ap.add_argument("--level", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=44)
    a = ap.parse_args()
    truth = PotTruth()
    formula = marginal.ModelFormula("y", threshold="x1", scale="x1")
    hits = []
    for lane in spawn(make_rng(a.seed), a.reps):
        g_data, g_x, g_boot = spawn(lane, 3)
        data, _ = pot_dataset(truth, a.n, g_data)
        x = g_x.uniform(-1, 1)
        bq = marginal.bootstrap_quantiles(data, formula, truth.lam, Dataset.from_arrays({"x1": [x]}),
                                          a.q, a.B, g_boot, a.level)
        target = truth.quantile(np.array([[x]]), a.q)[0]
        hits.append(bq.lower[0] <= target <= bq.upper[0])
    print(f"coverage of {a.level:.0%} intervals: {np.mean(hits):.3f} over {a.reps} replicates")


if __name__ == "__main__":
    main()
