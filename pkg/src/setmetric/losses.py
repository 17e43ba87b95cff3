"""Loss terms and their analytic gradients.

The total training objective is a weighted sum of four terms: softmax
cross-entropy on clip features against class prototypes, a batch-hard clip
triplet loss, a triplet loss on constructed hard positive sets, and a
set-aware triplet loss on frame sets. Gradients are exact subgradients: the
discrete selections (mining, min/max pairs, frame picks) are treated as
constants, hinges contribute zero at and below the margin boundary, and the
euclidean distance gradient at coincident points is the zero vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mining, numerics, set_distance as sd
from .mining import Batch, HardPositivePair, TripletIndices


@dataclass
class LossWeights:
    """Margin eta and the four term weights [ce, ctri_hm, ctri_hpsc, stri_hm]."""

    eta: float = 0.3
    lambdas: tuple[float, float, float, float] = (1.0, 0.5, 0.5, 0.5)

    def __post_init__(self):
        self.lambdas = tuple(float(v) for v in self.lambdas)
        if self.eta < 0:
            raise ValueError(f"margin must be >= 0, got {self.eta}")
        if len(self.lambdas) != 4 or any(v < 0 for v in self.lambdas):
            raise ValueError(f"lambdas must be 4 nonnegative weights, got {self.lambdas}")


@dataclass
class ClassifierHead:
    """Prototype matrix of shape (embedding dim, num classes); column c is
    the prototype of class c. Logits are plain dot products, no bias."""

    prototypes: np.ndarray

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        if self.prototypes.ndim != 2:
            raise ValueError(f"prototypes must be (d, n), got shape {self.prototypes.shape}")
        if not np.isfinite(self.prototypes).all():
            raise ValueError("non-finite prototype entries")

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[1]

    @classmethod
    def init(cls, dim: int, num_classes: int, rng: np.random.Generator) -> "ClassifierHead":
        return cls(numerics.glorot_uniform(rng, dim, num_classes))


TERM_NAMES = ("ce", "ctri_hm", "ctri_hpsc", "stri_hm")


@dataclass
class LossReport:
    total: float
    terms: dict[str, float]
    active_counts: dict[str, int]

    def as_dict(self) -> dict:
        return {"total": self.total, "terms": dict(self.terms),
                "active_counts": dict(self.active_counts)}


@dataclass
class GradientBundle:
    """Lambda-weighted gradients: per-frame (PK, T, d) and prototypes (d, n)."""

    d_frames: np.ndarray
    d_prototypes: np.ndarray


def class_probabilities(features: np.ndarray, head: ClassifierHead) -> np.ndarray:
    """Softmax class probabilities for a (n, d) feature array."""
    return numerics.softmax(np.asarray(features, dtype=np.float64) @ head.prototypes)


def softmax_cross_entropy(clip_features: np.ndarray, labels: np.ndarray,
                          head: ClassifierHead) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean negative log likelihood of each clip's label.

    Returns (loss, gradient wrt features, gradient wrt prototypes).
    """
    features = np.asarray(clip_features, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if labels.min() < 0 or labels.max() >= head.num_classes:
        raise ValueError(f"labels out of range for a {head.num_classes}-class head: {labels.tolist()}")
    n = features.shape[0]
    logits = features @ head.prototypes
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted[np.arange(n), labels] - log_z
    loss = float(-log_p.mean())

    probs = numerics.softmax(logits)
    d_logits = probs.copy()
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n
    return loss, d_logits @ head.prototypes.T, features.T @ d_logits


def clip_triplet_loss_hm(batch: Batch, triplets: list[TripletIndices], weights: LossWeights,
                         metric: str = "euclidean") -> tuple[float, np.ndarray, int]:
    """Batch-hard triplet loss on clip features.

    Mean over anchors of max(0, d(a, p) - d(a, n) + eta). Returns the loss,
    the gradient wrt clip features, and the number of active hinges.
    """
    feats = batch.clip_features
    grad = np.zeros_like(feats)
    coef = 1.0 / len(triplets)
    total = 0.0
    active = 0
    for tri in triplets:
        d_ap, u_ap = sd.distance_with_grad(feats[tri.anchor], feats[tri.positive], metric)
        d_an, u_an = sd.distance_with_grad(feats[tri.anchor], feats[tri.negative], metric)
        term = d_ap - d_an + weights.eta
        if term <= 0.0:
            continue
        total += term
        active += 1
        grad[tri.anchor] += coef * (u_ap - u_an)
        grad[tri.positive] -= coef * u_ap
        grad[tri.negative] += coef * u_an
    return total * coef, grad, active


def _extreme_pair(block: np.ndarray, role: str) -> tuple[float, int, int]:
    # Realizing frame pair of a set-distance block; ties resolve to the
    # lowest row-major index via first-occurrence argmin/argmax.
    if role == "max_pair":
        flat = int(np.argmax(block))
    elif role == "min_pair":
        flat = int(np.argmin(block))
    elif role == "hausdorff":
        row_mins = block.min(axis=1)
        col_mins = block.min(axis=0)
        forward = row_mins.max()
        backward = col_mins.max()
        if forward >= backward:
            r = int(np.argmax(row_mins))
            return float(forward), r, int(np.argmin(block[r]))
        c = int(np.argmax(col_mins))
        return float(backward), int(np.argmin(block[:, c])), c
    else:
        raise ValueError(f"unknown pair role {role!r}")
    r, c = np.unravel_index(flat, block.shape)
    return float(block[r, c]), int(r), int(c)


_SET_ROLES = {
    "hybrid": ("max_pair", "min_pair"),
    "ordinary": ("min_pair", "min_pair"),
    "hausdorff": ("hausdorff", "hausdorff"),
}


def set_triplet_loss_hm(batch: Batch, set_triplets: list[TripletIndices], weights: LossWeights,
                        kind: str = "hybrid", metric: str = "euclidean") -> tuple[float, np.ndarray, int]:
    """Set-aware triplet loss on frame sets.

    Mean over anchors of max(0, D+ - D- + eta) where D+/D- are the
    kind-specific set distances of the mined positive and negative sets.
    Gradient flows only through the frames realizing each active selection.
    Returns (loss, gradient wrt frames (PK, T, d), active hinge count).
    """
    if kind not in _SET_ROLES:
        raise ValueError(f"unknown set triplet kind {kind!r}, expected one of {sorted(_SET_ROLES)}")
    pos_role, neg_role = _SET_ROLES[kind]
    frames = batch.frame_tensor
    grad = np.zeros_like(frames)
    coef = 1.0 / len(set_triplets)
    total = 0.0
    active = 0
    for tri in set_triplets:
        pos_block = sd._pairwise_kernel(frames[tri.anchor], frames[tri.positive], metric)
        neg_block = sd._pairwise_kernel(frames[tri.anchor], frames[tri.negative], metric)
        d_pos, pa, pp = _extreme_pair(pos_block, pos_role)
        d_neg, na, nn = _extreme_pair(neg_block, neg_role)
        term = d_pos - d_neg + weights.eta
        if term <= 0.0:
            continue
        total += term
        active += 1
        _, u_pos = sd.distance_with_grad(frames[tri.anchor, pa], frames[tri.positive, pp], metric)
        _, u_neg = sd.distance_with_grad(frames[tri.anchor, na], frames[tri.negative, nn], metric)
        grad[tri.anchor, pa] += coef * u_pos
        grad[tri.positive, pp] -= coef * u_pos
        grad[tri.anchor, na] -= coef * u_neg
        grad[tri.negative, nn] += coef * u_neg
    return total * coef, grad, active


def hpsc_triplet_loss(pairs: list[HardPositivePair], batch: Batch, weights: LossWeights,
                      metric: str = "euclidean") -> tuple[float, np.ndarray, np.ndarray, int]:
    """Triplet loss over constructed hard positive pairs.

    Each pair anchors a clip feature against the constructed set feature;
    the negative is the nearest different-class clip feature. Returns
    (loss, gradient wrt clip features, gradient wrt frames, active count).
    The frame gradient carries the constructed feature's share, split
    uniformly over the frames selected into the hard positive set.
    """
    feat_grad = np.zeros_like(batch.clip_features)
    frame_grad = np.zeros(batch.frame_tensor.shape)
    coef = 1.0 / len(pairs)
    total = 0.0
    active = 0
    for pair in pairs:
        anchor = batch.clip_features[pair.anchor_clip]
        neg_idx = mining.mine_hard_negative_clip(anchor, batch, pair.label, metric)
        d_ap, u_ap = sd.distance_with_grad(anchor, pair.constructed_feature, metric)
        d_an, u_an = sd.distance_with_grad(anchor, batch.clip_features[neg_idx], metric)
        term = d_ap - d_an + weights.eta
        if term <= 0.0:
            continue
        total += term
        active += 1
        feat_grad[pair.anchor_clip] += coef * (u_ap - u_an)
        feat_grad[neg_idx] += coef * u_an
        share = -coef / len(pair.selected_indices)
        for clip_i, frame_i in zip(pair.origin_clips, pair.origin_frames):
            frame_grad[clip_i, frame_i] += share * u_ap
    return total * coef, feat_grad, frame_grad, active


def total_loss(terms: dict[str, float], weights: LossWeights,
               active_counts: dict[str, int] | None = None) -> LossReport:
    """Combine per-term values into the weighted total."""
    unknown = set(terms) - set(TERM_NAMES)
    if unknown:
        raise ValueError(f"unknown loss terms {sorted(unknown)}")
    values = [float(terms.get(name, 0.0)) for name in TERM_NAMES]
    total = float(sum(lam * v for lam, v in zip(weights.lambdas, values)))
    counts = {name: int((active_counts or {}).get(name, 0)) for name in TERM_NAMES}
    return LossReport(total=total, terms=dict(zip(TERM_NAMES, values)), active_counts=counts)


def batch_loss_and_grad(batch: Batch, head: ClassifierHead, weights: LossWeights, *,
                        metric: str = "euclidean", set_kind: str = "hybrid",
                        use_stri: bool = True, use_hpsc: bool = True) -> tuple[LossReport, GradientBundle]:
    """Mine a batch, evaluate every enabled term, and assemble gradients.

    Terms whose lambda is zero (or whose toggle is off) are skipped and
    reported as exactly 0. Clip-feature gradients are redistributed to
    frames as 1/T through the uniform aggregation; each term's gradient is
    scaled by its lambda before summation.
    """
    lam_ce, lam_ctri, lam_hpsc, lam_stri = weights.lambdas
    pk, t = batch.num_clips, batch.frames_per_clip
    terms: dict[str, float] = {}
    counts: dict[str, int] = {}
    feat_grad = np.zeros_like(batch.clip_features)
    frame_grad = np.zeros(batch.frame_tensor.shape)
    proto_grad = np.zeros_like(head.prototypes)

    if lam_ce > 0:
        ce, d_feat, d_proto = softmax_cross_entropy(batch.clip_features, batch.global_labels, head)
        terms["ce"] = ce
        counts["ce"] = pk
        feat_grad += lam_ce * d_feat
        proto_grad += lam_ce * d_proto

    if lam_ctri > 0:
        triplets = mining.hard_mine_clip_triplets(batch, metric)
        ctri, d_feat, active = clip_triplet_loss_hm(batch, triplets, weights, metric)
        terms["ctri_hm"] = ctri
        counts["ctri_hm"] = active
        feat_grad += lam_ctri * d_feat

    if lam_hpsc > 0 and use_hpsc:
        pairs = mining.build_hard_positive_pairs(batch, head)
        hpsc, d_feat, d_frames, active = hpsc_triplet_loss(pairs, batch, weights, metric)
        terms["ctri_hpsc"] = hpsc
        counts["ctri_hpsc"] = active
        feat_grad += lam_hpsc * d_feat
        frame_grad += lam_hpsc * d_frames

    if lam_stri > 0 and use_stri:
        set_triplets = mining.hard_mine_set_triplets(batch, metric, kind=set_kind)
        stri, d_frames, active = set_triplet_loss_hm(batch, set_triplets, weights, set_kind, metric)
        terms["stri_hm"] = stri
        counts["stri_hm"] = active
        frame_grad += lam_stri * d_frames

    # clip-feature gradients flow to each of the T frames with weight 1/T
    frame_grad += feat_grad[:, None, :] / t
    report = total_loss(terms, weights, counts)
    return report, GradientBundle(d_frames=frame_grad, d_prototypes=proto_grad)


def total_loss_grad(batch: Batch, head: ClassifierHead, weights: LossWeights, config) -> GradientBundle:
    """Gradient bundle for a config carrying metric/set_kind/use_stri/use_hpsc."""
    _, bundle = batch_loss_and_grad(
        batch, head, weights,
        metric=getattr(config, "metric", "euclidean"),
        set_kind=getattr(config, "set_kind", "hybrid"),
        use_stri=getattr(config, "use_stri", True),
        use_hpsc=getattr(config, "use_hpsc", True),
    )
    return bundle
