"""Low-level numeric helpers shared by the distance, mining and loss code.

Summation here is always pairwise (binary tree over adjacent elements) so
that results are reproducible bit-for-bit and, after canonical row sorting,
independent of the storage order of the inputs.
"""

from __future__ import annotations

import numpy as np


def tree_sum(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Pairwise-tree reduction along ``axis``.

    Adjacent elements are added in rounds (0+1, 2+3, ...), carrying a lone
    trailing element to the next round. The pairing pattern depends only on
    the length of the axis, so two arrays with equal content in equal order
    reduce to bit-identical results.
    """
    work = np.moveaxis(np.asarray(values), axis, 0)
    if work.shape[0] == 0:
        raise ValueError("tree_sum of an empty axis")
    while work.shape[0] > 1:
        even = work.shape[0] - (work.shape[0] % 2)
        folded = work[0:even:2] + work[1:even:2]
        if even < work.shape[0]:
            folded = np.concatenate([folded, work[even:]], axis=0)
        work = folded
    return work[0]


def canonical_row_order(rows: np.ndarray) -> np.ndarray:
    """Indices that sort rows lexicographically (first column primary).

    The sort is stable, so duplicate rows keep their storage order; since
    duplicates are equal this does not affect any value computed from the
    sorted rows.
    """
    if rows.ndim != 2:
        raise ValueError(f"expected 2-D rows, got shape {rows.shape}")
    return np.lexsort(rows.T[::-1])


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a 2-D logit array, stabilized by the row max."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform init in [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))
