"""Model pieces: simple graph convolution over a learnable adjacency, one
sigmoid domain head per node behind a gradient-reversal coupling, entropy
attention over the heads' uncertainty, and a pooled linear emotion head.

forward() is pure: it never mutates parameters and records every intermediate
in the returned trace.  The convolution applies no per-layer nonlinearity, so
propagating L times equals multiplying by the L-th matrix power once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import AdjacencyState, normalize
from .montage import GLOBAL_PAIRS

# Domain probabilities are clamped away from {0, 1} so the binary
# cross-entropy and its gradient stay finite.
SIGMOID_CLAMP = 1e-7

CHECKPOINT_MAGIC = "targnn-checkpoint"


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ModelHyper:
    layers: int = 2
    hidden_dim: int = 16


@dataclass
class ModelParams:
    adjacency: AdjacencyState  # (n, n), trained jointly with the weights
    weight: np.ndarray  # (d_in, hidden) shared node projection
    emo_weight: np.ndarray  # (hidden, 2)
    emo_bias: np.ndarray  # (2,)
    dom_weight: np.ndarray  # (n, hidden), row k is node k's domain head
    dom_bias: np.ndarray  # (n,)
    hyper: ModelHyper

    def copy(self) -> "ModelParams":
        return ModelParams(
            adjacency=self.adjacency.copy(),
            weight=self.weight.copy(),
            emo_weight=self.emo_weight.copy(),
            emo_bias=self.emo_bias.copy(),
            dom_weight=self.dom_weight.copy(),
            dom_bias=self.dom_bias.copy(),
            hyper=self.hyper,
        )


@dataclass(frozen=True)
class ForwardTrace:
    propagation: np.ndarray  # S, (n, n)
    node_embed: np.ndarray  # Z, (n, hidden)
    domain_prob: np.ndarray  # (n,) clamped sigmoid outputs
    attention: np.ndarray  # (n,) in [1, 1 + ln 2]
    attended: np.ndarray  # (n, hidden) attention-scaled embeddings
    pooled: np.ndarray  # (hidden,)
    logits: np.ndarray  # (2,)


def init_params(
    n_nodes: int,
    d_in: int,
    adjacency: AdjacencyState,
    rng: np.random.Generator,
    hyper: ModelHyper = ModelHyper(),
) -> ModelParams:
    """Uniform weights scaled by 1/sqrt(fan_in); biases start at zero.

    Domain heads start at zero so every node opens at d-hat = 0.5, the
    maximum-entropy point: attention is exactly uniform until the adversarial
    term moves a head, and with lambda = 0 the heads never move at all.
    """
    h = hyper.hidden_dim

    def uniform(fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, shape)

    return ModelParams(
        adjacency=adjacency.copy(),
        weight=uniform(d_in, (d_in, h)),
        emo_weight=uniform(h, (h, 2)),
        emo_bias=np.zeros(2),
        dom_weight=np.zeros((n_nodes, h)),
        dom_bias=np.zeros(n_nodes),
        hyper=hyper,
    )


def sigmoid(u: np.ndarray) -> np.ndarray:
    out = np.empty_like(u, dtype=np.float64)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    e = np.exp(u[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sgc_forward(S: np.ndarray, x: np.ndarray, weight: np.ndarray, layers: int) -> np.ndarray:
    """Z = S^layers @ x @ weight; linear, so the power form is exact."""
    if layers < 1:
        raise ValueError(f"need at least one propagation step, got {layers}")
    S = np.asarray(S, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeMismatch(f"propagation matrix must be square, got {S.shape}")
    if x.ndim != 2 or x.shape[0] != S.shape[0]:
        raise ShapeMismatch(f"input {x.shape} does not match {S.shape[0]} nodes")
    if weight.ndim != 2 or weight.shape[0] != x.shape[1]:
        raise ShapeMismatch(f"weight {weight.shape} does not match input dim {x.shape[1]}")
    return np.linalg.matrix_power(S, layers) @ x @ weight


def grl(x: np.ndarray, lam: float) -> np.ndarray:
    """Gradient-reversal layer, forward side: the identity.

    The backward contract is grl_backward: an incoming gradient g becomes
    -lam * g, which is what couples the domain loss adversarially to
    everything upstream.
    """
    return x


def grl_backward(grad: np.ndarray, lam: float) -> np.ndarray:
    return -lam * np.asarray(grad)


def domain_heads(z: np.ndarray, dom_weight: np.ndarray, dom_bias: np.ndarray) -> np.ndarray:
    """Per-node domain probabilities: sigmoid(dom_weight[k] . z[k] + dom_bias[k]).

    Works on (n, hidden) or batched (..., n, hidden) embeddings; output is
    clamped to [SIGMOID_CLAMP, 1 - SIGMOID_CLAMP].
    """
    if z.shape[-2:] != dom_weight.shape:
        raise ShapeMismatch(f"embeddings {z.shape} vs domain heads {dom_weight.shape}")
    u = np.einsum("...kh,kh->...k", z, dom_weight) + dom_bias
    return np.clip(sigmoid(u), SIGMOID_CLAMP, 1.0 - SIGMOID_CLAMP)


def attention_weights(domain_prob: np.ndarray) -> np.ndarray:
    """1 + binary entropy (nats) of each head's output; in [1, 1 + ln 2].

    An uncertain head (probability near one half) marks a node whose
    representation transfers across domains, so that node is amplified.
    """
    p = np.asarray(domain_prob, dtype=np.float64)
    entropy = -(p * np.log(p) + (1.0 - p) * np.log1p(-p))
    return 1.0 + entropy


def emotion_head(
    attended: np.ndarray, emo_weight: np.ndarray, emo_bias: np.ndarray
) -> np.ndarray:
    """Sum-pool the attended node embeddings, then one affine map to 2 logits."""
    pooled = attended.sum(axis=-2)
    return pooled @ emo_weight + emo_bias


def forward(params: ModelParams, x: np.ndarray, lam: float = 0.0) -> ForwardTrace:
    """Full single-sample pass; lam only tags the gradient-reversal coupling
    and has no effect on forward values."""
    S = normalize(params.adjacency)
    z = sgc_forward(S, x, params.weight, params.hyper.layers)
    reversed_z = grl(z, lam)
    domain_prob = domain_heads(reversed_z, params.dom_weight, params.dom_bias)
    attention = attention_weights(domain_prob)
    attended = attention[:, None] * z
    pooled = attended.sum(axis=-2)
    logits = pooled @ params.emo_weight + params.emo_bias
    return ForwardTrace(
        propagation=S,
        node_embed=z,
        domain_prob=domain_prob,
        attention=attention,
        attended=attended,
        pooled=pooled,
        logits=logits,
    )


def _write_tensor(fh, name: str, value: np.ndarray) -> None:
    mat = np.atleast_2d(np.asarray(value, dtype=np.float64))
    fh.write(f"tensor {name} {mat.shape[0]} {mat.shape[1]}\n")
    for row in mat:
        fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Plain-text checkpoint; repr() keeps every float64 exact on reload."""
    with open(Path(path), "w") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} 1\n")
        fh.write(f"layers {params.hyper.layers}\n")
        fh.write(f"hidden {params.hyper.hidden_dim}\n")
        pairs = ";".join(f"{i},{j}" for i, j in params.adjacency.global_pairs)
        fh.write(f"global_pairs {pairs}\n")
        _write_tensor(fh, "adjacency", params.adjacency.matrix)
        _write_tensor(fh, "weight", params.weight)
        _write_tensor(fh, "emo_weight", params.emo_weight)
        _write_tensor(fh, "emo_bias", params.emo_bias)
        _write_tensor(fh, "dom_weight", params.dom_weight)
        _write_tensor(fh, "dom_bias", params.dom_bias)


def load_checkpoint(path: str | Path) -> ModelParams:
    path = Path(path)
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a {CHECKPOINT_MAGIC} file")
    layers = int(lines[1].split()[1])
    hidden = int(lines[2].split()[1])
    pairs_field = lines[3].split(" ", 1)[1] if " " in lines[3] else ""
    global_pairs = tuple(
        tuple(int(v) for v in chunk.split(",")) for chunk in pairs_field.split(";") if chunk
    )

    tensors: dict[str, np.ndarray] = {}
    i = 4
    while i < len(lines):
        if not lines[i].startswith("tensor "):
            raise ValueError(f"{path}: line {i + 1}: expected a tensor header")
        _, name, rows, cols = lines[i].split()
        rows, cols = int(rows), int(cols)
        block = [
            [float(tok) for tok in lines[i + 1 + r].split()] for r in range(rows)
        ]
        mat = np.asarray(block, dtype=np.float64)
        if mat.shape != (rows, cols):
            raise ValueError(f"{path}: tensor {name} has shape {mat.shape}, header says {(rows, cols)}")
        tensors[name] = mat
        i += 1 + rows

    expected = {"adjacency", "weight", "emo_weight", "emo_bias", "dom_weight", "dom_bias"}
    if set(tensors) != expected:
        raise ValueError(f"{path}: tensors {sorted(tensors)} != expected {sorted(expected)}")
    return ModelParams(
        adjacency=AdjacencyState(tensors["adjacency"], global_pairs or GLOBAL_PAIRS),
        weight=tensors["weight"],
        emo_weight=tensors["emo_weight"],
        emo_bias=tensors["emo_bias"][0],
        dom_weight=tensors["dom_weight"],
        dom_bias=tensors["dom_bias"][0],
        hyper=ModelHyper(layers=layers, hidden_dim=hidden),
    )
