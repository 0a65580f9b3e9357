"""Channel-dependence graphs from histogram mutual information.

MI uses equal-width bins over each vector's own range and base-2 entropies,
computed as H(X) + H(Y) - H(X,Y) from the shared binning.  A constant vector
carries no information, so its MI is defined as 0 rather than an error.

build_initial_adjacency runs a vectorized version of the same arithmetic so
that averaging normalized MI over thousands of samples stays cheap; it is
bit-identical to calling normalized_mi in a loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .montage import CHANNELS, GLOBAL_PAIRS


class LengthMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class IsolatedNode(ValueError):
    pass


def _bin_indices(x: np.ndarray, bins: int) -> np.ndarray:
    """Equal-width bin index of every element, binned over the last axis range.

    The maximum lands in the top bin, matching right-closed final-edge
    histogram behavior.  Callers must exclude constant slices (range zero).
    """
    lo = x.min(axis=-1, keepdims=True)
    span = x.max(axis=-1, keepdims=True) - lo
    idx = np.floor((x - lo) / span * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def _occupancy_log2(keys: np.ndarray) -> np.ndarray:
    """Sum over elements of log2(count of that element's key), per last axis.

    Equals sum over occupied cells of c*log2(c).  Both branches produce the
    per-element count array in element order before summing, so the scalar
    (unique-based, fine for long vectors) and batched (all-pairs, fine for
    short vectors) routes return bit-identical floats.
    """
    if keys.ndim == 1:
        _, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
        return np.log2(counts[inverse].astype(np.float64)).sum(axis=-1)
    eq = keys[..., :, None] == keys[..., None, :]
    return np.log2(eq.sum(axis=-1)).sum(axis=-1)


def _entropy_from_keys(keys: np.ndarray) -> np.ndarray:
    n = keys.shape[-1]
    return math.log2(n) - _occupancy_log2(keys) / n


def _check_pair(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape[0] != y.shape[0]:
        raise LengthMismatch(f"vectors of length {x.shape[0]} and {y.shape[0]}")
    if x.shape[0] == 0:
        raise EmptyInput("empty vectors")
    if x.shape[0] < 2:
        raise LengthMismatch("need at least 2 samples to estimate dependence")
    return x, y


def mutual_information(x: np.ndarray, y: np.ndarray, bins: int = 16) -> float:
    """Histogram MI estimate in bits; non-negative, 0 for constant input."""
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    x, y = _check_pair(x, y)
    if x.min() == x.max() or y.min() == y.max():
        return 0.0
    bi = _bin_indices(x, bins)
    bj = _bin_indices(y, bins)
    h_x = _entropy_from_keys(bi)
    h_y = _entropy_from_keys(bj)
    h_xy = _entropy_from_keys(bi * bins + bj)
    return float(np.maximum(0.0, h_x + h_y - h_xy))


def normalized_mi(x: np.ndarray, y: np.ndarray, bins: int = 16) -> float:
    """2*MI / (H(X) + H(Y)), clamped to [0, 1]; 0 when both entropies vanish."""
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    x, y = _check_pair(x, y)
    if x.min() == x.max() or y.min() == y.max():
        return 0.0
    bi = _bin_indices(x, bins)
    bj = _bin_indices(y, bins)
    h_x = _entropy_from_keys(bi)
    h_y = _entropy_from_keys(bj)
    denom = h_x + h_y
    if denom == 0.0:
        return 0.0
    mi = np.maximum(0.0, h_x + h_y - _entropy_from_keys(bi * bins + bj))
    return float(np.clip(2.0 * mi / denom, 0.0, 1.0))


@dataclass
class AdjacencyState:
    """Learnable symmetric adjacency over the montage channels."""

    matrix: np.ndarray  # (n, n) float64, symmetric
    global_pairs: tuple[tuple[int, int], ...] = field(default=GLOBAL_PAIRS)

    def copy(self) -> "AdjacencyState":
        return AdjacencyState(self.matrix.copy(), self.global_pairs)


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Project onto symmetric matrices; applied to A after every update."""
    return 0.5 * (a + a.T)


def build_initial_adjacency(
    samples: list[np.ndarray], bins: int = 16
) -> AdjacencyState:
    """Mean normalized MI between every channel pair, averaged over samples.

    Each sample is an (n_channels, length) array: a band-limited epoch or a
    feature row.  The diagonal is set to 1 (self-loops) and the symmetric
    global pairs are shifted by -1 so they start in [-1, 0].
    """
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    if not samples:
        raise EmptyInput("no samples to build an adjacency from")
    try:
        stack = np.asarray(samples, dtype=np.float64)
    except ValueError as exc:
        raise LengthMismatch(f"samples do not share one shape: {exc}") from None
    if stack.ndim != 3 or stack.shape[2] < 1:
        raise LengthMismatch(
            "samples must share one (n_channels, length) shape with length >= 1"
        )
    n_samples, n_ch, length = stack.shape

    a = np.eye(n_ch, dtype=np.float64)
    if length > 1:
        constant = stack.min(axis=-1) == stack.max(axis=-1)  # (n_samples, n_ch)
        safe = np.where(constant[..., None], np.linspace(0.0, 1.0, length), stack)
        idx = _bin_indices(safe, bins)  # (n_samples, n_ch, length)
        h_marginal = _entropy_from_keys(idx)  # (n_samples, n_ch)
        for i in range(n_ch):
            for j in range(i + 1, n_ch):
                h_joint = _entropy_from_keys(idx[:, i, :] * bins + idx[:, j, :])
                denom = h_marginal[:, i] + h_marginal[:, j]
                mi = np.maximum(0.0, denom - h_joint)
                with np.errstate(divide="ignore", invalid="ignore"):
                    nmi = np.clip(2.0 * mi / denom, 0.0, 1.0)
                nmi[(denom == 0.0) | constant[:, i] | constant[:, j]] = 0.0
                a[i, j] = a[j, i] = math.fsum(nmi) / n_samples

    pairs = GLOBAL_PAIRS if n_ch == len(CHANNELS) else ()
    for i, j in pairs:
        a[i, j] -= 1.0
        a[j, i] -= 1.0
    return AdjacencyState(matrix=a, global_pairs=pairs)


def normalize(adj: AdjacencyState | np.ndarray) -> np.ndarray:
    """Symmetric degree normalization D^-1/2 A D^-1/2 with absolute degrees.

    Degrees use absolute row sums so the square root stays real when global
    pairs push entries negative.
    """
    a = adj.matrix if isinstance(adj, AdjacencyState) else np.asarray(adj, dtype=np.float64)
    degrees = np.abs(a).sum(axis=1)
    if np.any(degrees == 0.0):
        dead = [int(k) for k in np.flatnonzero(degrees == 0.0)]
        raise IsolatedNode(f"rows {dead} have zero absolute degree")
    return a / np.sqrt(np.outer(degrees, degrees))
