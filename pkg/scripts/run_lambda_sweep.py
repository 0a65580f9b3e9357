#!/usr/bin/env python3
"""Adversarial-weight sweep on the synthetic benchmark: LOSO mean accuracy at
every lambda in the grid, per seed, with the frozen training configuration.
"""

import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import argparse
import time

import numpy as np

from targnn.benchmark import LAMBDA_GRID, SEEDS, run_lambda_sweep


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--jobs", type=int, default=1, help="parallel LOSO folds")
    parser.add_argument(
        "--lams", type=str, default=None,
        help="comma-separated lambda grid (default %s)" % (LAMBDA_GRID,),
    )
    args = parser.parse_args()
    lams = (
        tuple(float(v) for v in args.lams.split(",")) if args.lams else LAMBDA_GRID
    )

    t0 = time.time()
    grid = run_lambda_sweep(
        lams=lams,
        jobs=args.jobs,
        progress=lambda lam, seed, res: print(
            f"lambda={lam:g} seed={seed}: mean_acc={res.mean_accuracy:.4f} "
            f"std={res.std_accuracy:.4f}", flush=True
        ),
    )

    header = "lambda " + " ".join(f"seed{c}" for c in SEEDS) + "   mean"
    print(header)
    for lam in lams:
        accs = np.array([grid[(lam, s)].mean_accuracy for s in SEEDS])
        print(f"{lam:6g} " + " ".join(f"{a:.4f}" for a in accs) + f" {accs.mean():.4f}")

    degrading = [
        s for s in SEEDS
        if any(
            grid[(lams[i], s)].mean_accuracy > grid[(lams[i + 1], s)].mean_accuracy
            for i in range(len(lams) - 1)
            if lams[i] >= 1.0
        )
    ]
    print(f"accuracy drops somewhere past lambda=1 on seeds {degrading}")
    print(f"total {time.time() - t0:.0f} s")


if __name__ == "__main__":
    main()
