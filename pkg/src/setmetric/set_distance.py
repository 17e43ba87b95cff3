"""Distances between frame-embedding sets and clip-level aggregation.

A video clip is treated as a finite set of frame embeddings. Four set
distances are provided on top of a base vector metric:

* ``ordinary``: the minimum pairwise distance between the two sets.
* ``hausdorff``: the larger of the two directed farthest-point-to-nearest-
  point distances.
* ``hybrid_positive``: the maximum pairwise distance (meant for same-label
  pairs, where the farthest frames are the hard ones).
* ``hybrid_negative``: the minimum pairwise distance (meant for cross-label
  pairs, where the closest frames are the hard ones). Identical to
  ``ordinary`` by construction.

All functions are pure, deterministic, and invariant to permuting the
frames inside either set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics

METRICS = ("euclidean", "squared_euclidean")
SET_DISTANCE_KINDS = ("ordinary", "hausdorff", "hybrid_positive", "hybrid_negative")


@dataclass
class FrameSet:
    """A clip: an ordered store of frame embeddings plus an identity label.

    ``frames`` has shape (T, d). The ordering is storage only; every set
    distance is invariant to permuting the rows.
    """

    frames: np.ndarray
    identity: int = 0
    clip_id: int = 0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim == 1:
            self.frames = self.frames[:, None]
        if self.frames.ndim != 2 or self.frames.shape[0] == 0:
            raise ValueError(f"frames must be a nonempty (T, d) array, got shape {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise ValueError(f"non-finite frame values in clip {self.clip_id}")
        if self.identity < 0:
            raise ValueError(f"identity label must be >= 0, got {self.identity}")

    @property
    def size(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class AggregationConfig:
    """Weights for summarizing a clip to a single feature.

    ``weights=None`` means uniform 1/T. Explicit weights must be nonnegative
    and sum to 1 within 1e-12. The nonlinearity is fixed to the identity.
    """

    weights: np.ndarray | None = None

    def resolve(self, size: int) -> np.ndarray:
        if self.weights is None:
            return np.full(size, 1.0 / size)
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (size,):
            raise ValueError(f"weight length {w.shape} does not match set size {size}")
        if (w < 0).any():
            raise ValueError("aggregation weights must be nonnegative")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError(f"aggregation weights sum to {w.sum()!r}, expected 1")
        return w


UNIFORM = AggregationConfig()


def _check_metric(metric: str) -> None:
    if metric not in METRICS:
        raise ValueError(f"unknown base metric {metric!r}, expected one of {METRICS}")


def _check_dims(da: int, db: int) -> None:
    if da != db:
        raise ValueError(f"embedding dimension mismatch: {da} vs {db}")


def _pairwise_kernel(xs: np.ndarray, ys: np.ndarray, metric: str) -> np.ndarray:
    # (n, d) x (m, d) -> (n, m); squared distances via a fixed tree reduction
    # over the coordinate axis so scalar and matrix paths agree bit-for-bit.
    diff = xs[:, None, :] - ys[None, :, :]
    sq = numerics.tree_sum(diff * diff, axis=2)
    if metric == "euclidean":
        return np.sqrt(sq)
    return sq


def base_distance(a: np.ndarray, b: np.ndarray, metric: str = "euclidean") -> float:
    """Distance between two single frame embeddings."""
    _check_metric(metric)
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    _check_dims(a.shape[-1], b.shape[-1])
    return float(_pairwise_kernel(a[None, :], b[None, :], metric)[0, 0])


def pairwise_matrix(a: FrameSet, b: FrameSet, metric: str = "euclidean") -> np.ndarray:
    """Matrix with entry (i, j) = base_distance(a.frames[i], b.frames[j])."""
    _check_metric(metric)
    _check_dims(a.dim, b.dim)
    return _pairwise_kernel(a.frames, b.frames, metric)


def ordinary_distance(a: FrameSet, b: FrameSet, metric: str = "euclidean") -> float:
    """Minimum pairwise distance between two nonempty sets."""
    return float(pairwise_matrix(a, b, metric).min())


def hausdorff_distance(a: FrameSet, b: FrameSet, metric: str = "euclidean") -> float:
    """Max over both directions of the farthest-to-nearest pair distance."""
    m = pairwise_matrix(a, b, metric)
    forward = m.min(axis=1).max()
    backward = m.min(axis=0).max()
    return float(max(forward, backward))


def hybrid_positive_distance(a: FrameSet, p: FrameSet, metric: str = "euclidean") -> float:
    """Maximum pairwise distance; the positive-pair half of the hybrid metric."""
    return float(pairwise_matrix(a, p, metric).max())


def hybrid_negative_distance(a: FrameSet, n: FrameSet, metric: str = "euclidean") -> float:
    """Minimum pairwise distance; the negative-pair half of the hybrid metric."""
    return float(pairwise_matrix(a, n, metric).min())


def set_distance(a: FrameSet, b: FrameSet, kind: str, metric: str = "euclidean") -> float:
    """Dispatch to one of the four set distances by name."""
    if kind == "ordinary":
        return ordinary_distance(a, b, metric)
    if kind == "hausdorff":
        return hausdorff_distance(a, b, metric)
    if kind == "hybrid_positive":
        return hybrid_positive_distance(a, b, metric)
    if kind == "hybrid_negative":
        return hybrid_negative_distance(a, b, metric)
    raise ValueError(f"unknown set distance kind {kind!r}, expected one of {SET_DISTANCE_KINDS}")


def aggregate(s: FrameSet, cfg: AggregationConfig = UNIFORM) -> np.ndarray:
    """Weighted mean of the frames of a set.

    Weighted rows are sorted into a canonical lexicographic order before the
    pairwise-tree summation, so the result is bit-identical under any
    permutation of (frames, weights) pairs; with uniform weights this makes
    the aggregate a true set function.
    """
    w = cfg.resolve(s.size)
    rows = s.frames * w[:, None]
    order = numerics.canonical_row_order(rows)
    return numerics.tree_sum(rows[order], axis=0)


def aggregate_rows(frames: np.ndarray) -> np.ndarray:
    """Uniform aggregate of a raw (T, d) frame array (no FrameSet wrapper)."""
    frames = np.asarray(frames, dtype=np.float64)
    rows = frames * (1.0 / frames.shape[0])
    order = numerics.canonical_row_order(rows)
    return numerics.tree_sum(rows[order], axis=0)


def distance_with_grad(x: np.ndarray, y: np.ndarray, metric: str) -> tuple[float, np.ndarray]:
    """Distance d(x, y) and its gradient with respect to x.

    The gradient with respect to y is the negation. At coincident points the
    euclidean gradient is defined as the zero vector.
    """
    _check_metric(metric)
    diff = x - y
    if metric == "squared_euclidean":
        return float(numerics.tree_sum(diff * diff)), 2.0 * diff
    d = float(np.sqrt(numerics.tree_sum(diff * diff)))
    if d == 0.0:
        return 0.0, np.zeros_like(diff)
    return d, diff / d
