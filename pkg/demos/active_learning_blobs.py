"""A full active-learning run on Gaussian blobs, several strategies side by side.

Every cycle retrains a fresh teacher/student pair on the labeled set,
draws a candidate subset ten times the per-cycle quota, and lets the
strategy pick the quota from it.  ``proposed`` ranks candidates by the KL
divergence from the teacher's posterior to the student's.

Things to try:

  - more seeds (``--seeds 5``) to see how noisy single runs are
  - ``--strategies proposed coreset-kcenter mc-dropout-entropy``
  - ``--spread 0.8`` for heavier class overlap
"""

import argparse
import time

import numpy as np

from alkt.datasets import make_blobs
from alkt.experiment import ExperimentConfig, run_experiment

parser = argparse.ArgumentParser()
parser.add_argument("--strategies", nargs="+", default=["proposed", "random", "entropy"])
parser.add_argument("--seeds", type=int, default=2)
parser.add_argument("--spread", type=float, default=0.5)
args = parser.parse_args()

table = {}
for strategy in args.strategies:
    t0 = time.perf_counter()
    rows = []
    for seed in range(args.seeds):
        ds = make_blobs(4, 500, 2, args.spread, seed=seed)
        cfg = ExperimentConfig(strategy=strategy, data_seed=seed, init_seed=seed, strategy_seed=seed)
        res = run_experiment(ds, cfg)
        rows.append([r.test_accuracy for r in res.records])
    table[strategy] = np.mean(rows, axis=0)
    print(f"{strategy}: {time.perf_counter() - t0:.0f}s")

budgets = ExperimentConfig().schedule.points()
print("\nmean test accuracy per labeled fraction")
print("strategy            " + " ".join(f"{b:6.2f}" for b in budgets))
for strategy, accs in table.items():
    print(f"{strategy:<20}" + " ".join(f"{a:6.3f}" for a in accs))
