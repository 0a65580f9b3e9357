#!/usr/bin/env python3
"""Paired synthetic benchmark: adversarial attention vs no adaptation, plus
the geometry-initialized adjacency ablation, over the five frozen seeds.

Prints one row per seed and a summary of the paired comparison.
"""

import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import argparse
import time

import numpy as np

from targnn.benchmark import SEEDS, TRAIN_CONFIG, run_distance_ablation, run_point


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--jobs", type=int, default=1, help="parallel LOSO folds")
    parser.add_argument("--skip-ablation", action="store_true",
                        help="only run the ta_rgnn vs no_domain_adaptation pair")
    args = parser.parse_args()

    t0 = time.time()
    rows = []
    for seed in SEEDS:
        base = run_point(seed, variant="no_domain_adaptation", jobs=args.jobs)
        full = run_point(seed, variant="ta_rgnn", jobs=args.jobs)
        rows.append((seed, base.result.mean_accuracy, full.result.mean_accuracy))
        print(
            f"seed {seed}: no_domain_adaptation={base.result.mean_accuracy:.4f} "
            f"ta_rgnn={full.result.mean_accuracy:.4f} "
            f"diff={full.result.mean_accuracy - base.result.mean_accuracy:+.4f}",
            flush=True,
        )

    base_means = np.array([r[1] for r in rows])
    full_means = np.array([r[2] for r in rows])
    diffs = full_means - base_means
    wins = int((diffs > 0).sum())
    print(f"no_domain_adaptation mean {base_means.mean():.4f}")
    print(f"ta_rgnn              mean {full_means.mean():.4f}")
    print(f"paired diff mean {diffs.mean():+.4f}, ta_rgnn strictly ahead on {wins}/5 seeds")

    if not args.skip_ablation:
        dist = run_distance_ablation(
            jobs=args.jobs,
            progress=lambda seed, res: print(
                f"seed {seed}: distance_init_adjacency={res.mean_accuracy:.4f}", flush=True
            ),
        )
        dist_means = np.array([dist[s].mean_accuracy for s in SEEDS])
        print(f"distance_init mean {dist_means.mean():.4f} "
              f"(mutual-information init {full_means.mean():.4f}, lambda={TRAIN_CONFIG.lam:g})")

    print(f"total {time.time() - t0:.0f} s")


if __name__ == "__main__":
    main()
