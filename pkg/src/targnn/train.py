"""Objective, hand-derived gradients, and the leave-one-subject-out harness.

The scalar being optimized is

    total = cls + alpha * ||A||_1 - lam * domain

where cls is mean source cross-entropy, domain is the mean node-wise binary
cross-entropy of the domain heads over source and target, and the -lam
coupling is what the gradient-reversal layer realizes during backpropagation.
backward() returns the exact gradient of that scalar for every tensor,
including the adjacency through D^-1/2 A D^-1/2 with absolute-value degrees,
so central finite differences of loss() reproduce it.

One deliberate exception: the attention weights are treated as constants
during differentiation (the heads re-weight nodes, they are not trained
through the emotion loss).  Finite-difference checks must therefore hold the
attention fixed at the evaluation point; frozen_attention() provides it.
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .dataio import FeatureSample
from .graph import AdjacencyState, build_initial_adjacency, normalize, symmetrize
from .model import (
    SIGMOID_CLAMP,
    ModelHyper,
    ModelParams,
    attention_weights,
    grl_backward,
    init_params,
    sigmoid,
)
from .montage import CHANNELS, ELECTRODE_COORDS, GLOBAL_PAIRS

VARIANTS = (
    "ta_rgnn",
    "rgnn_no_attention",
    "no_domain_adaptation",
    "global_domain_classifier",
    "distance_init_adjacency",
)


class EmptySourceBatch(ValueError):
    pass


class NoTrainingData(ValueError):
    pass


class TooFewSubjects(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1.0  # adversarial weight; "lambda" in config files
    alpha: float = 0.01  # l1 penalty on the adjacency
    lr: float = 0.01
    max_epochs: int = 60
    batch_size: int = 16  # per side: source and target each
    patience: int = 10
    min_delta: float = 1e-4
    seed: int = 0
    variant: str = "ta_rgnn"
    bins: int = 16  # histogram bins for the initial adjacency
    layers: int = 2
    hidden_dim: int = 16

    def validate(self) -> None:
        if self.lam < 0 or self.alpha < 0:
            raise ValueError("lambda and alpha must be non-negative")
        if self.lr <= 0 or self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("lr must be positive, max_epochs and batch_size at least 1")
        if self.patience < 1 or self.min_delta < 0:
            raise ValueError("patience must be at least 1 and min_delta non-negative")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.bins < 2 or self.layers < 1 or self.hidden_dim < 1:
            raise ValueError("bins must be >= 2, layers and hidden_dim >= 1")


@dataclass(frozen=True)
class DomainBatch:
    """A training step's view of the data: labeled source rows plus unlabeled
    target rows.  Target labels are stripped at construction, so no
    training-time code path can reach them."""

    source_x: np.ndarray  # (ns, n, d)
    source_y: np.ndarray  # (ns,)
    target_x: np.ndarray  # (nt, n, d)

    @classmethod
    def from_samples(
        cls, source: list[FeatureSample], target: list[FeatureSample]
    ) -> "DomainBatch":
        shape = (0, source[0].features.shape[0], source[0].features.shape[1]) if source else (0, 14, 5)
        return cls(
            source_x=np.stack([s.features for s in source]) if source else np.zeros(shape),
            source_y=np.asarray([s.label for s in source], dtype=np.int64),
            target_x=np.stack([s.features for s in target]) if target else np.zeros(shape),
        )


@dataclass(frozen=True)
class LossParts:
    total: float
    cls: float  # mean source cross-entropy (bare, without the l1 term)
    domain: float  # mean domain binary cross-entropy
    l1: float  # alpha * ||A||_1, the penalty as it enters total
    l1_norm: float  # ||A||_1, unscaled


@dataclass
class Gradients:
    adjacency: np.ndarray
    weight: np.ndarray
    emo_weight: np.ndarray
    emo_bias: np.ndarray
    dom_weight: np.ndarray
    dom_bias: np.ndarray


@dataclass(frozen=True)
class FoldReport:
    held_out_subject: str
    accuracy: float
    confusion: np.ndarray  # (2, 2) int64, rows = true label, cols = predicted
    epochs_to_converge: int
    loss_trace: tuple[tuple[float, float, float], ...]  # per epoch: (cls, domain, ||A||_1)


@dataclass(frozen=True)
class LosoResult:
    folds: tuple[FoldReport, ...]
    mean_accuracy: float
    std_accuracy: float  # population std over folds
    mean_epochs: float


@dataclass(frozen=True)
class SweepPoint:
    lam: float
    alpha: float
    mean_accuracy: float
    std_accuracy: float


def _flags(cfg: TrainConfig) -> tuple[float, bool, bool]:
    lam = 0.0 if cfg.variant == "no_domain_adaptation" else cfg.lam
    use_attention = cfg.variant != "rgnn_no_attention"
    node_wise = cfg.variant != "global_domain_classifier"
    return lam, use_attention, node_wise


def _trunk(params: ModelParams, x_all: np.ndarray):
    """Shared forward: propagation powers and node embeddings for a stack."""
    a = params.adjacency.matrix
    degrees = np.abs(a).sum(axis=1)
    s = normalize(params.adjacency)
    powers = [np.eye(a.shape[0])]
    for _ in range(params.hyper.layers):
        powers.append(powers[-1] @ s)
    m = powers[-1] @ x_all  # (B, n, d)
    z = m @ params.weight  # (B, n, h)
    return degrees, s, powers, m, z


def _domain_side(params: ModelParams, z: np.ndarray, node_wise: bool):
    if node_wise:
        u = np.einsum("bkh,kh->bk", z, params.dom_weight) + params.dom_bias
    else:
        u = z.sum(axis=1) @ params.dom_weight[0] + params.dom_bias[0]  # (B,)
    sig = sigmoid(u)
    return u, sig, np.clip(sig, SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)


def _attention(dhat: np.ndarray, use_attention: bool, node_wise: bool, n: int) -> np.ndarray:
    if not use_attention:
        shape = dhat.shape if node_wise else (dhat.shape[0], n)
        return np.ones(shape)
    if node_wise:
        return attention_weights(dhat)
    return np.repeat(attention_weights(dhat)[:, None], n, axis=1)


def frozen_attention(params: ModelParams, batch: DomainBatch, cfg: TrainConfig) -> np.ndarray:
    """Attention at the current parameters, the constant that differentiation
    of the emotion loss holds fixed.  Pass it back to loss() when building a
    finite-difference oracle."""
    _, use_attention, node_wise = _flags(cfg)
    x_all = np.concatenate([batch.source_x, batch.target_x])
    *_, z = _trunk(params, x_all)
    _, _, dhat = _domain_side(params, z, node_wise)
    return _attention(dhat, use_attention, node_wise, z.shape[1])


def _loss_and_grads(
    params: ModelParams,
    batch: DomainBatch,
    cfg: TrainConfig,
    attn_override: np.ndarray | None = None,
    need_grads: bool = True,
) -> tuple[LossParts, Gradients | None]:
    lam, use_attention, node_wise = _flags(cfg)
    ns = batch.source_x.shape[0]
    nt = batch.target_x.shape[0]
    if ns == 0:
        raise EmptySourceBatch("source side of the batch is empty")
    if nt == 0 and lam > 0:
        raise ValueError("target batch required when the adversarial weight is nonzero")

    a = params.adjacency.matrix
    n = a.shape[0]
    layers = params.hyper.layers
    x_all = np.concatenate([batch.source_x, batch.target_x])
    degrees, s, powers, m, z = _trunk(params, x_all)
    dom_labels = np.concatenate([np.ones(ns), np.zeros(nt)])

    u, sig, dhat = _domain_side(params, z, node_wise)
    attn = attn_override if attn_override is not None else _attention(
        dhat, use_attention, node_wise, n
    )

    # emotion head over the labeled source rows
    zs = z[:ns]
    attn_s = attn[:ns]
    pooled = np.einsum("bk,bkh->bh", attn_s, zs)
    logits = pooled @ params.emo_weight + params.emo_bias
    shift = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shift)
    norm = exp.sum(axis=1, keepdims=True)
    probs = exp / norm
    ys = batch.source_y
    ce = np.log(norm[:, 0]) - shift[np.arange(ns), ys]
    l_cls = float(ce.mean())

    # domain side: binary cross-entropy per sample (and per node head)
    labels_b = dom_labels[:, None] if node_wise else dom_labels
    bce = -(labels_b * np.log(dhat) + (1.0 - labels_b) * np.log1p(-dhat))
    l_dom = float(bce.mean())

    l1_norm = float(np.abs(a).sum())
    l1_term = cfg.alpha * l1_norm
    total = l_cls + l1_term - lam * l_dom
    parts = LossParts(total=total, cls=l_cls, domain=l_dom, l1=l1_term, l1_norm=l1_norm)
    if not need_grads:
        return parts, None

    # --- emotion path ---
    dlogits = probs.copy()
    dlogits[np.arange(ns), ys] -= 1.0
    dlogits /= ns
    g_emo_bias = dlogits.sum(axis=0)
    g_emo_weight = pooled.T @ dlogits
    g_pooled = dlogits @ params.emo_weight.T  # (ns, h)
    g_z = np.zeros_like(z)
    g_z[:ns] = attn_s[:, :, None] * g_pooled[:, None, :]  # attention held constant

    # --- domain path: bare gradients of the mean BCE, reversed at the trunk ---
    live = (sig > SIGMOID_CLAMP) & (sig < 1.0 - SIGMOID_CLAMP)
    if node_wise:
        g_u = np.where(live, sig - dom_labels[:, None], 0.0) / sig.size
        g_dom_weight = np.einsum("bk,bkh->kh", g_u, z)
        g_dom_bias = g_u.sum(axis=0)
        g_z_dom = g_u[:, :, None] * params.dom_weight[None, :, :]
    else:
        g_u = np.where(live, sig - dom_labels, 0.0) / sig.size
        g_dom_weight = np.zeros_like(params.dom_weight)
        g_dom_weight[0] = g_u @ z.sum(axis=1)
        g_dom_bias = np.zeros_like(params.dom_bias)
        g_dom_bias[0] = g_u.sum()
        g_z_dom = np.broadcast_to(
            (g_u[:, None] * params.dom_weight[0])[:, None, :], z.shape
        )
    g_z = g_z + grl_backward(g_z_dom, lam)
    g_dom_weight = -lam * g_dom_weight
    g_dom_bias = -lam * g_dom_bias

    # --- shared trunk ---
    g_weight = np.einsum("bnd,bnh->dh", m, g_z)
    g_m = g_z @ params.weight.T  # (B, n, d)
    g_p = np.einsum("bnd,bmd->nm", g_m, x_all)
    g_s = np.zeros_like(s)
    for k in range(layers):
        g_s += powers[k].T @ g_p @ powers[layers - 1 - k].T

    # through S = A / sqrt(outer(deg, deg)) with deg_i = sum_j |A_ij|
    t = 1.0 / np.sqrt(degrees)
    g_a = g_s * np.outer(t, t)
    gs_a = g_s * a
    g_t = gs_a @ t + gs_a.T @ t
    g_deg = -0.5 * t**3 * g_t
    sign_a = np.sign(a)
    g_a = g_a + g_deg[:, None] * sign_a + cfg.alpha * sign_a

    grads = Gradients(
        adjacency=g_a,
        weight=g_weight,
        emo_weight=g_emo_weight,
        emo_bias=g_emo_bias,
        dom_weight=g_dom_weight,
        dom_bias=g_dom_bias,
    )
    return parts, grads


def loss(
    params: ModelParams,
    batch: DomainBatch,
    cfg: TrainConfig,
    attn_override: np.ndarray | None = None,
) -> LossParts:
    parts, _ = _loss_and_grads(params, batch, cfg, attn_override, need_grads=False)
    return parts


def backward(
    params: ModelParams,
    batch: DomainBatch,
    cfg: TrainConfig,
    attn_override: np.ndarray | None = None,
) -> Gradients:
    _, grads = _loss_and_grads(params, batch, cfg, attn_override, need_grads=True)
    return grads


def sgd_step(params: ModelParams, grads: Gradients, lr: float) -> None:
    """One in-place gradient-descent step; A is re-symmetrized afterwards."""
    params.weight -= lr * grads.weight
    params.emo_weight -= lr * grads.emo_weight
    params.emo_bias -= lr * grads.emo_bias
    params.dom_weight -= lr * grads.dom_weight
    params.dom_bias -= lr * grads.dom_bias
    params.adjacency.matrix = symmetrize(params.adjacency.matrix - lr * grads.adjacency)


def predict_logits(params: ModelParams, x_stack: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    """Emotion logits for a stack of samples, attention live per the variant."""
    _, use_attention, node_wise = _flags(cfg)
    *_, z = _trunk(params, x_stack)
    _, _, dhat = _domain_side(params, z, node_wise)
    attn = _attention(dhat, use_attention, node_wise, z.shape[1])
    pooled = np.einsum("bk,bkh->bh", attn, z)
    return pooled @ params.emo_weight + params.emo_bias


def evaluate(
    params: ModelParams, samples: list[FeatureSample], cfg: TrainConfig
) -> tuple[float, np.ndarray]:
    """Accuracy and a 2x2 confusion matrix (rows true, cols predicted)."""
    x = np.stack([s.features for s in samples])
    pred = predict_logits(params, x, cfg).argmax(axis=1)
    confusion = np.zeros((2, 2), dtype=np.int64)
    for s, p in zip(samples, pred):
        confusion[s.label, int(p)] += 1
    return float(confusion.trace() / confusion.sum()), confusion


def distance_init_adjacency(coords: np.ndarray | None = None) -> AdjacencyState:
    """Adjacency from electrode geometry: A_ij = min(1, delta^2 / d_ij^2).

    delta is calibrated so the median off-diagonal entry is 0.5.  Diagonal and
    global-pair treatment match the MI initialization.
    """
    c = ELECTRODE_COORDS if coords is None else np.asarray(coords, dtype=np.float64)
    n = c.shape[0]
    if n < 2:
        raise ValueError("need at least two electrodes")
    diff = c[:, None, :] - c[None, :, :]
    d2 = (diff**2).sum(axis=-1)
    upper = d2[np.triu_indices(n, 1)]
    delta2 = 0.5 * np.median(upper)
    with np.errstate(divide="ignore"):
        a = np.minimum(1.0, delta2 / d2)
    a[d2 == 0.0] = 1.0
    pairs = GLOBAL_PAIRS if n == len(CHANNELS) else ()
    for i, j in pairs:
        a[i, j] -= 1.0
        a[j, i] -= 1.0
    return AdjacencyState(matrix=a, global_pairs=pairs)


def _fold_rng(cfg: TrainConfig, held_out_subject: str) -> np.random.Generator:
    # Seeded by (config seed, subject name), so per-fold results do not depend
    # on fold order or on how many workers ran them.
    return np.random.default_rng([cfg.seed, zlib.crc32(held_out_subject.encode())])


def train_fold(
    train_samples: list[FeatureSample],
    test_samples: list[FeatureSample],
    cfg: TrainConfig,
    return_params: bool = False,
) -> FoldReport | tuple[FoldReport, ModelParams]:
    """Train on the source subjects against one held-out (unlabeled) subject.

    The held-out labels are used only to score the final confusion matrix;
    every training step sees the target through a label-free DomainBatch.
    """
    cfg.validate()
    if not train_samples:
        raise NoTrainingData("no training samples")
    if not test_samples:
        raise NoTrainingData("no test samples to evaluate on")
    held = {s.subject_id for s in test_samples}
    if len(held) != 1:
        raise ValueError(f"test samples span several subjects: {sorted(held)}")
    held_out = held.pop()
    if held_out in {s.subject_id for s in train_samples}:
        raise ValueError(f"held-out subject {held_out} also appears in the training data")

    rng = _fold_rng(cfg, held_out)
    xs = np.stack([s.features for s in train_samples])
    ys = np.asarray([s.label for s in train_samples], dtype=np.int64)
    xt = np.stack([s.features for s in test_samples])
    n_src, n_nodes, d_in = xs.shape
    n_tgt = xt.shape[0]

    if cfg.variant == "distance_init_adjacency":
        adjacency = distance_init_adjacency()
    else:
        adjacency = build_initial_adjacency([s.features for s in train_samples], cfg.bins)
    params = init_params(
        n_nodes, d_in, adjacency, rng, ModelHyper(cfg.layers, cfg.hidden_dim)
    )

    target_pool: list[int] = []

    def next_target_idx() -> np.ndarray:
        if n_tgt <= cfg.batch_size:
            return np.arange(n_tgt)
        while len(target_pool) < cfg.batch_size:
            target_pool.extend(rng.permutation(n_tgt).tolist())
        take = target_pool[: cfg.batch_size]
        del target_pool[: cfg.batch_size]
        return np.asarray(take)

    best = math.inf
    stale = 0
    trace: list[tuple[float, float, float]] = []
    epochs_run = 0
    for _ in range(cfg.max_epochs):
        order = rng.permutation(n_src)
        sums = np.zeros(4)  # total, cls, domain, l1_norm
        steps = 0
        for start in range(0, n_src, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = DomainBatch(xs[idx], ys[idx], xt[next_target_idx()])
            parts, grads = _loss_and_grads(params, batch, cfg)
            sgd_step(params, grads, cfg.lr)
            sums += (parts.total, parts.cls, parts.domain, parts.l1_norm)
            steps += 1
        epochs_run += 1
        epoch_total, epoch_cls, epoch_dom, epoch_l1 = sums / steps
        trace.append((float(epoch_cls), float(epoch_dom), float(epoch_l1)))
        if best - epoch_total > cfg.min_delta:
            best = epoch_total
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    accuracy, confusion = evaluate(params, test_samples, cfg)
    report = FoldReport(
        held_out_subject=held_out,
        accuracy=accuracy,
        confusion=confusion,
        epochs_to_converge=epochs_run,
        loss_trace=tuple(trace),
    )
    return (report, params) if return_params else report


def _fold_task(args: tuple) -> FoldReport:
    train_samples, test_samples, cfg = args
    return train_fold(train_samples, test_samples, cfg)


def loso(samples: list[FeatureSample], cfg: TrainConfig, jobs: int = 1) -> LosoResult:
    """Leave-one-subject-out over every subject in the data, in sorted order.

    Per-fold results are independent of fold order and of jobs, because each
    fold derives its RNG from (cfg.seed, subject name).
    """
    by_subject: dict[str, list[FeatureSample]] = {}
    for s in samples:
        by_subject.setdefault(s.subject_id, []).append(s)
    subjects = sorted(by_subject)
    if len(subjects) < 2:
        raise TooFewSubjects(f"leave-one-subject-out needs >= 2 subjects, got {len(subjects)}")

    tasks = []
    for subject in subjects:
        train = [s for s in samples if s.subject_id != subject]
        tasks.append((train, by_subject[subject], cfg))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            folds = tuple(pool.map(_fold_task, tasks))
    else:
        folds = tuple(map(_fold_task, tasks))

    accs = np.asarray([f.accuracy for f in folds])
    epochs = np.asarray([f.epochs_to_converge for f in folds])
    return LosoResult(
        folds=folds,
        mean_accuracy=float(accs.mean()),
        std_accuracy=float(accs.std(ddof=0)),
        mean_epochs=float(epochs.mean()),
    )


def sweep(
    samples: list[FeatureSample],
    lams: list[float],
    alphas: list[float],
    cfg: TrainConfig,
    jobs: int = 1,
) -> list[SweepPoint]:
    """LOSO at every (lambda, alpha) grid point; lambda varies slowest."""
    points = []
    for lam in lams:
        for alpha in alphas:
            result = loso(samples, replace(cfg, lam=lam, alpha=alpha), jobs=jobs)
            points.append(
                SweepPoint(
                    lam=lam,
                    alpha=alpha,
                    mean_accuracy=result.mean_accuracy,
                    std_accuracy=result.std_accuracy,
                )
            )
    return points
