"""Batch construction and hard-example selection.

A batch holds P identities x K clips x T frames. Mining is batch-hard: per
anchor, the farthest same-label candidate and the nearest different-label
candidate are selected, with ties broken toward the lowest index. All
selections are deterministic functions of their inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from . import numerics, set_distance as sd
from .set_distance import FrameSet

if TYPE_CHECKING:
    from .losses import ClassifierHead


@dataclass
class BatchSpec:
    """P identities x K clips x T frames, plus the sampling seed."""

    P: int = 4
    K: int = 4
    T: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.P < 2 or self.K < 2:
            raise ValueError(f"need P >= 2 and K >= 2 for valid triplets, got P={self.P}, K={self.K}")
        if self.T < 1:
            raise ValueError(f"need T >= 1, got T={self.T}")


@dataclass
class Batch:
    """P*K clips with batch-local labels and precomputed clip features."""

    clips: list[FrameSet]
    clip_features: np.ndarray  # (PK, d)
    labels: np.ndarray  # (PK,) batch-local labels
    identity_map: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        self.clip_features = np.asarray(self.clip_features, dtype=np.float64)
        n = len(self.clips)
        if n == 0 or self.labels.shape != (n,) or self.clip_features.shape[0] != n:
            raise ValueError("clips, labels and clip_features must align and be nonempty")
        sizes = {c.size for c in self.clips}
        dims = {c.dim for c in self.clips}
        if len(sizes) != 1 or len(dims) != 1:
            raise ValueError(f"batch clips must share frame count and dimension, got sizes {sizes}, dims {dims}")

    @classmethod
    def from_clips(cls, clips: list[FrameSet], identity_map: np.ndarray | None = None) -> "Batch":
        feats = np.stack([sd.aggregate(c) for c in clips])
        labels = np.array([c.identity for c in clips], dtype=int)
        if identity_map is None:
            identity_map = np.unique(labels)
        return cls(clips=clips, clip_features=feats, labels=labels, identity_map=np.asarray(identity_map))

    @property
    def num_clips(self) -> int:
        return len(self.clips)

    @property
    def frames_per_clip(self) -> int:
        return self.clips[0].size

    @property
    def frame_tensor(self) -> np.ndarray:
        return np.stack([c.frames for c in self.clips])  # (PK, T, d)

    @property
    def global_labels(self) -> np.ndarray:
        """Dataset-level identities; batch-local labels index identity_map."""
        if self.identity_map.size:
            return self.identity_map[self.labels]
        return self.labels


@dataclass
class TripletIndices:
    anchor: int
    positive: int
    negative: int


@dataclass
class HardPositivePair:
    """One anchor clip paired with the constructed hard positive feature.

    ``selected_indices`` index the flat K*T frame pool of the class;
    ``origin_clips``/``origin_frames`` resolve them back to batch positions.
    """

    anchor_clip: int
    anchor_feature: np.ndarray
    constructed_feature: np.ndarray
    label: int
    selected_indices: np.ndarray
    origin_clips: np.ndarray
    origin_frames: np.ndarray


def sample_batch(dataset, spec: BatchSpec, rng: np.random.Generator) -> Batch:
    """Draw P identities x K clips x T frames from a dataset.

    Labels are remapped to 0..P-1 (the original ids are kept in
    ``identity_map``). Identities with fewer than K clips, or clips with
    fewer than T frames, are sampled with replacement and a warning.
    """
    by_identity: dict[int, list[int]] = {}
    for idx, clip in enumerate(dataset.clips):
        by_identity.setdefault(clip.identity, []).append(idx)
    identities = sorted(by_identity)
    if len(identities) < spec.P:
        raise ValueError(f"dataset has {len(identities)} identities, need P={spec.P}")

    chosen_ids = rng.choice(identities, size=spec.P, replace=False)
    clips: list[FrameSet] = []
    for local, ident in enumerate(chosen_ids):
        pool = by_identity[int(ident)]
        if len(pool) >= spec.K:
            picks = rng.choice(len(pool), size=spec.K, replace=False)
        else:
            warnings.warn(f"identity {ident} has {len(pool)} clips < K={spec.K}; sampling with replacement")
            picks = rng.choice(len(pool), size=spec.K, replace=True)
        for pick in picks:
            src = dataset.clips[pool[int(pick)]]
            if src.size >= spec.T:
                rows = rng.choice(src.size, size=spec.T, replace=False)
            else:
                warnings.warn(f"clip {src.clip_id} has {src.size} frames < T={spec.T}; sampling with replacement")
                rows = rng.choice(src.size, size=spec.T, replace=True)
            clips.append(FrameSet(frames=src.frames[rows], identity=local, clip_id=src.clip_id))
    return Batch.from_clips(clips, identity_map=np.asarray(chosen_ids, dtype=int))


def _masked_extrema_triplets(pos_scores: np.ndarray, neg_scores: np.ndarray,
                             labels: np.ndarray) -> list[TripletIndices]:
    # pos_scores/neg_scores: (n, n) candidate scores per (anchor, candidate).
    # argmax/argmin return the first occurrence, i.e. the lowest index on ties.
    n = labels.shape[0]
    same = labels[:, None] == labels[None, :]
    eye = np.eye(n, dtype=bool)
    triplets = []
    for i in range(n):
        pos_mask = same[i] & ~eye[i]
        neg_mask = ~same[i]
        if not pos_mask.any() or not neg_mask.any():
            raise ValueError(f"anchor {i} (label {labels[i]}) lacks a "
                             f"{'positive' if not pos_mask.any() else 'negative'} candidate")
        triplets.append(TripletIndices(anchor=i,
                                       positive=int(np.argmax(np.where(pos_mask, pos_scores[i], -np.inf))),
                                       negative=int(np.argmin(np.where(neg_mask, neg_scores[i], np.inf)))))
    return triplets


def hard_mine_clip_triplets(batch: Batch, metric: str = "euclidean") -> list[TripletIndices]:
    """Per anchor clip: farthest same-label clip, nearest different-label clip."""
    d = sd._pairwise_kernel(batch.clip_features, batch.clip_features, metric)
    return _masked_extrema_triplets(d, d, batch.labels)


def set_distance_tables(batch: Batch, metric: str, kind: str) -> tuple[np.ndarray, np.ndarray]:
    """All-pairs set distances: (positive-role table, negative-role table).

    For ``hybrid`` the positive role uses the max-pair distance and the
    negative role the min-pair distance; for ``ordinary``/``hausdorff`` the
    single metric fills both roles.
    """
    n, t = batch.num_clips, batch.frames_per_clip
    flat = batch.frame_tensor.reshape(n * t, -1)
    full = sd._pairwise_kernel(flat, flat, metric)
    blocks = full.reshape(n, t, n, t).transpose(0, 2, 1, 3)  # (n, n, Ta, Tb)
    if kind == "hybrid":
        return blocks.max(axis=(2, 3)), blocks.min(axis=(2, 3))
    if kind == "ordinary":
        mins = blocks.min(axis=(2, 3))
        return mins, mins
    if kind == "hausdorff":
        forward = blocks.min(axis=3).max(axis=2)
        backward = blocks.min(axis=2).max(axis=2)
        haus = np.maximum(forward, backward)
        return haus, haus
    raise ValueError(f"unknown set triplet kind {kind!r}, expected hybrid, ordinary or hausdorff")


def hard_mine_set_triplets(batch: Batch, metric: str = "euclidean", kind: str = "hybrid") -> list[TripletIndices]:
    """Per anchor set: hardest positive set and hardest negative set.

    With ``kind='hybrid'`` positives are scored by the max-pair distance and
    negatives by the min-pair distance; other kinds score both roles with the
    same metric.
    """
    pos_table, neg_table = set_distance_tables(batch, metric, kind)
    return _masked_extrema_triplets(pos_table, neg_table, batch.labels)


def construct_hard_positive_set(class_frames: np.ndarray, label: int, prototypes: np.ndarray,
                                t: int) -> tuple[np.ndarray, np.ndarray]:
    """Select the t frames least likely to belong to their own class.

    ``class_frames`` is the (K*T, d) pool of one class; ``prototypes`` is the
    (d, n) classifier matrix. Per-frame class probabilities come from the
    softmax over prototype logits; the t lowest-probability frames are chosen
    (stable sort, ties to the lowest index) and averaged into the constructed
    hard positive feature. Returns (selected indices, feature).
    """
    class_frames = np.asarray(class_frames, dtype=np.float64)
    pool = class_frames.shape[0]
    if t > pool:
        raise ValueError(f"cannot select {t} frames from a pool of {pool}")
    if not 0 <= label < prototypes.shape[1]:
        raise ValueError(f"class {label} not covered by a head with {prototypes.shape[1]} prototypes")
    probs = numerics.softmax(class_frames @ prototypes)[:, label]
    selected = np.argsort(probs, kind="stable")[:t]
    return selected, sd.aggregate_rows(class_frames[selected])


def build_hard_positive_pairs(batch: Batch, head: "ClassifierHead", t: int | None = None) -> list[HardPositivePair]:
    """Run hard positive set construction for every class in the batch.

    Each of the K clips of a class is paired with the single constructed
    feature of that class, yielding one pair per anchor clip.
    """
    t = batch.frames_per_clip if t is None else t
    global_of = dict(zip(batch.labels.tolist(), batch.global_labels.tolist()))
    pairs: list[HardPositivePair] = []
    for label in np.unique(batch.labels):
        clip_idxs = np.flatnonzero(batch.labels == label)
        class_frames = np.concatenate([batch.clips[i].frames for i in clip_idxs])
        selected, feature = construct_hard_positive_set(class_frames, global_of[int(label)], head.prototypes, t)
        origin_clips = clip_idxs[selected // batch.frames_per_clip]
        origin_frames = selected % batch.frames_per_clip
        for i in clip_idxs:
            pairs.append(HardPositivePair(
                anchor_clip=int(i),
                anchor_feature=batch.clip_features[i],
                constructed_feature=feature,
                label=int(label),
                selected_indices=selected,
                origin_clips=origin_clips,
                origin_frames=origin_frames,
            ))
    return pairs


def mine_hard_negative_clip(anchor_feature: np.ndarray, batch: Batch, anchor_class: int,
                            metric: str = "euclidean") -> int:
    """Index of the nearest clip whose label differs from ``anchor_class``."""
    other = batch.labels != anchor_class
    if not other.any():
        raise ValueError(f"batch contains no clip outside class {anchor_class}")
    d = sd._pairwise_kernel(anchor_feature[None, :], batch.clip_features, metric)[0]
    return int(np.argmin(np.where(other, d, np.inf)))
