"""The synthetic cross-subject benchmark: one frozen data spec, one frozen
training configuration, five seeds.

Everything here is deliberately constant.  The benchmark is a paired
comparison (variants and lambda values differ, nothing else does), so the
numbers below are part of the experiment definition: changing any of them
invalidates comparisons against previously reported runs.  Seed s feeds both
the data generator and the training RNG, so each seed is an independent
draw of the whole experiment.

The training point sits where the adversarial dynamics are informative but
still stable: the domain heads anti-learn (ascend their BCE), so head logits
grow roughly linearly in steps and eventually distort the trunk; 40 epochs
at lr 0.05 stays ahead of that at lambda <= 1, while lambda >= 2 lands
inside the blow-up, which is the degradation the lambda-sweep criterion
expects to see.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .dataio import SyntheticSpec, generate_synthetic
from .train import LosoResult, TrainConfig, loso

SEEDS = (0, 1, 2, 3, 4)

LAMBDA_GRID = (0.0, 0.5, 1.0, 2.0, 4.0)

DATA_SPEC = SyntheticSpec(
    n_subjects=10,
    samples_per_subject_per_class=200,
    class_separation=2.0,
    subject_shift=1.0,
    noise_scale=1.0,
)

TRAIN_CONFIG = TrainConfig(
    lam=1.0,
    alpha=0.02,
    lr=0.05,
    max_epochs=40,
    batch_size=128,
    hidden_dim=16,
)


@dataclass(frozen=True)
class BenchmarkRun:
    variant: str
    lam: float
    seed: int
    result: LosoResult


def benchmark_spec(seed: int) -> SyntheticSpec:
    return replace(DATA_SPEC, rng_seed=seed)


def benchmark_config(seed: int, variant: str = "ta_rgnn", lam: float | None = None) -> TrainConfig:
    cfg = replace(TRAIN_CONFIG, seed=seed, variant=variant)
    return cfg if lam is None else replace(cfg, lam=lam)


def run_point(seed: int, variant: str = "ta_rgnn", lam: float | None = None,
              jobs: int = 1) -> BenchmarkRun:
    cfg = benchmark_config(seed, variant, lam)
    samples = generate_synthetic(benchmark_spec(seed))
    return BenchmarkRun(variant=variant, lam=cfg.lam, seed=seed,
                        result=loso(samples, cfg, jobs=jobs))


def run_lambda_sweep(seeds=SEEDS, lams=LAMBDA_GRID, jobs: int = 1,
                     progress=None) -> dict[tuple[float, int], LosoResult]:
    """LOSO at every (lambda, seed) grid point with the frozen config.

    lambda = 0 doubles as the no-adaptation arm and lambda = TRAIN_CONFIG.lam
    as the full model, so downstream comparisons reuse these runs instead of
    retraining.
    """
    out: dict[tuple[float, int], LosoResult] = {}
    for seed in seeds:
        samples = generate_synthetic(benchmark_spec(seed))
        for lam in lams:
            cfg = benchmark_config(seed, lam=lam)
            out[(lam, seed)] = loso(samples, cfg, jobs=jobs)
            if progress is not None:
                progress(lam, seed, out[(lam, seed)])
    return out


def run_distance_ablation(seeds=SEEDS, jobs: int = 1,
                          progress=None) -> dict[int, LosoResult]:
    """The same frozen point with the geometry-initialized adjacency."""
    out: dict[int, LosoResult] = {}
    for seed in seeds:
        run = run_point(seed, variant="distance_init_adjacency", jobs=jobs)
        out[seed] = run.result
        if progress is not None:
            progress(seed, run.result)
    return out
