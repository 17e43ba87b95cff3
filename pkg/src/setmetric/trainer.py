"""Deterministic toy encoder, Adam-style optimizer, training loop, and the
finite-difference verification harness for the analytic gradients."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses, mining, numerics, set_distance as sd
from .losses import ClassifierHead, LossReport, LossWeights
from .mining import Batch, BatchSpec
from .set_distance import FrameSet

ENCODER_LAYOUTS = ("linear", "hidden")


@dataclass
class EncoderParams:
    """Either a single projection matrix or a one-hidden-layer ReLU map.

    ``weights`` holds [W] with W of shape (d_in, d_emb) for the linear
    layout, or [W1, W2] with shapes (d_in, h) and (h, d_emb).
    """

    layout: str
    weights: list[np.ndarray]

    def __post_init__(self):
        if self.layout not in ENCODER_LAYOUTS:
            raise ValueError(f"unknown encoder layout {self.layout!r}, expected one of {ENCODER_LAYOUTS}")
        expected = 1 if self.layout == "linear" else 2
        if len(self.weights) != expected:
            raise ValueError(f"{self.layout} layout expects {expected} weight matrices, got {len(self.weights)}")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        if self.layout == "hidden" and self.weights[0].shape[1] != self.weights[1].shape[0]:
            raise ValueError(f"hidden layer shapes do not chain: {self.weights[0].shape} -> {self.weights[1].shape}")
        for w in self.weights:
            if not np.isfinite(w).all():
                raise ValueError("non-finite encoder weights")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def embedding_dim(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def create(cls, layout: str, d_in: int, d_emb: int, hidden: int,
               rng: np.random.Generator) -> "EncoderParams":
        if layout == "linear":
            return cls(layout, [numerics.glorot_uniform(rng, d_in, d_emb)])
        return cls(layout, [numerics.glorot_uniform(rng, d_in, hidden),
                            numerics.glorot_uniform(rng, hidden, d_emb)])

    @classmethod
    def identity(cls, dim: int) -> "EncoderParams":
        return cls("linear", [np.eye(dim)])

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.layout, [w.copy() for w in self.weights])


def encode_frames(params: EncoderParams, xs: np.ndarray) -> np.ndarray:
    """Forward map for a (n, d_in) array of raw frames."""
    out, _ = _encode_forward(params, np.asarray(xs, dtype=np.float64))
    return out


def encode(params: EncoderParams, raw: np.ndarray) -> np.ndarray:
    """Forward map for a single raw frame vector."""
    raw = np.atleast_1d(np.asarray(raw, dtype=np.float64))
    if raw.shape[-1] != params.input_dim:
        raise ValueError(f"input dimension mismatch: frame has {raw.shape[-1]}, encoder expects {params.input_dim}")
    return encode_frames(params, raw[None, :])[0]


def _encode_forward(params: EncoderParams, xs: np.ndarray):
    if xs.shape[1] != params.input_dim:
        raise ValueError(f"input dimension mismatch: frames have {xs.shape[1]}, encoder expects {params.input_dim}")
    if params.layout == "linear":
        return xs @ params.weights[0], (xs,)
    pre = xs @ params.weights[0]
    hid = np.maximum(pre, 0.0)
    return hid @ params.weights[1], (xs, pre, hid)


def _encode_backward(params: EncoderParams, cache, d_out: np.ndarray) -> list[np.ndarray]:
    if params.layout == "linear":
        (xs,) = cache
        return [xs.T @ d_out]
    xs, pre, hid = cache
    d_w2 = hid.T @ d_out
    d_pre = (d_out @ params.weights[1].T) * (pre > 0.0)
    return [xs.T @ d_pre, d_w2]


@dataclass
class OptimizerState:
    """Adaptive first-order optimizer state (bias-corrected moments)."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, arrays: list[np.ndarray], learning_rate: float) -> "OptimizerState":
        return cls(learning_rate=learning_rate,
                   m=[np.zeros_like(a) for a in arrays],
                   v=[np.zeros_like(a) for a in arrays])


def optimizer_step(state: OptimizerState, arrays: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """Apply one in-place adaptive update to each parameter array."""
    state.step_count += 1
    t = state.step_count
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


@dataclass
class TrainConfig:
    batch: BatchSpec = field(default_factory=BatchSpec)
    loss: LossWeights = field(default_factory=LossWeights)
    metric: str = "euclidean"
    set_kind: str = "hybrid"
    epochs: int = 200
    learning_rate: float = 3e-4
    decay_factor: float = 0.1
    decay_epochs: tuple[int, ...] = (80, 160)
    steps_per_epoch: int | None = None
    eval_interval: int = 0
    seed: int = 0
    use_stri: bool = True
    use_hpsc: bool = True
    encoder_layout: str = "linear"
    embedding_dim: int = 8
    hidden_dim: int = 64

    def __post_init__(self):
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)
        if list(self.decay_epochs) != sorted(set(self.decay_epochs)):
            raise ValueError(f"decay epochs must be strictly increasing, got {self.decay_epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    wall_seconds: list[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"epochs": self.epochs, "evals": self.evals}


def _encode_batch(params: EncoderParams, raw_batch: Batch):
    xs = raw_batch.frame_tensor
    flat = xs.reshape(-1, xs.shape[2])
    emb_flat, cache = _encode_forward(params, flat)
    emb = emb_flat.reshape(xs.shape[0], xs.shape[1], -1)
    clips = [FrameSet(frames=emb[i], identity=int(raw_batch.labels[i]), clip_id=raw_batch.clips[i].clip_id)
             for i in range(raw_batch.num_clips)]
    encoded = Batch.from_clips(clips, identity_map=raw_batch.identity_map)
    return encoded, cache


def batch_forward_backward(params: EncoderParams, head: ClassifierHead, raw_batch: Batch,
                           cfg: TrainConfig) -> tuple[LossReport, list[np.ndarray]]:
    """Loss report plus gradients for [encoder weights..., prototypes]."""
    encoded, cache = _encode_batch(params, raw_batch)
    report, bundle = losses.batch_loss_and_grad(
        encoded, head, cfg.loss, metric=cfg.metric, set_kind=cfg.set_kind,
        use_stri=cfg.use_stri, use_hpsc=cfg.use_hpsc)
    d_flat = bundle.d_frames.reshape(-1, params.embedding_dim)
    return report, _encode_backward(params, cache, d_flat) + [bundle.d_prototypes]


def batch_loss(params: EncoderParams, head: ClassifierHead, raw_batch: Batch, cfg: TrainConfig) -> LossReport:
    encoded, _ = _encode_batch(params, raw_batch)
    report, _ = losses.batch_loss_and_grad(
        encoded, head, cfg.loss, metric=cfg.metric, set_kind=cfg.set_kind,
        use_stri=cfg.use_stri, use_hpsc=cfg.use_hpsc)
    return report


def train_step(params: EncoderParams, head: ClassifierHead, opt: OptimizerState,
               raw_batch: Batch, cfg: TrainConfig):
    """One optimization step; parameters and optimizer update in place.

    Raises RuntimeError naming the offending loss term if any value or
    gradient is non-finite.
    """
    report, grads = batch_forward_backward(params, head, raw_batch, cfg)
    for name, value in report.terms.items():
        if not np.isfinite(value):
            raise RuntimeError(f"non-finite loss term {name!r}: {value}")
    for g in grads:
        if not np.isfinite(g).all():
            raise RuntimeError("non-finite gradient in composite loss")
    optimizer_step(opt, params.weights + [head.prototypes], grads)
    return params, head, opt, report


def _mean_report(reports: list[LossReport]) -> dict:
    n = len(reports)
    terms = {name: sum(r.terms[name] for r in reports) / n for name in losses.TERM_NAMES}
    counts = {name: sum(r.active_counts[name] for r in reports) for name in losses.TERM_NAMES}
    return {"total": sum(r.total for r in reports) / n, "terms": terms, "active_counts": counts}


def learning_rate_at(cfg: TrainConfig, epoch: int) -> float:
    passed = sum(1 for e in cfg.decay_epochs if epoch >= e)
    return cfg.learning_rate * cfg.decay_factor ** passed


def train(dataset, cfg: TrainConfig):
    """Full training run; returns (encoder params, head, train log).

    Entirely reproducible from (dataset, cfg): parameter init, batch
    sampling, and updates all derive from cfg.seed.
    """
    dataset = _with_contiguous_identities(dataset)
    rng = np.random.default_rng(cfg.seed)
    num_classes = len(dataset.identities())
    params = EncoderParams.create(cfg.encoder_layout, dataset.dim, cfg.embedding_dim, cfg.hidden_dim, rng)
    head = ClassifierHead.init(cfg.embedding_dim, num_classes, rng)
    opt = OptimizerState.for_params(params.weights + [head.prototypes], cfg.learning_rate)
    steps = cfg.steps_per_epoch or max(1, len(dataset.clips) // (cfg.batch.P * cfg.batch.K))
    log = TrainLog()
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        opt.learning_rate = learning_rate_at(cfg, epoch)
        reports = []
        for _ in range(steps):
            raw_batch = mining.sample_batch(dataset, cfg.batch, rng)
            _, _, _, report = train_step(params, head, opt, raw_batch, cfg)
            reports.append(report)
        log.epochs.append({"epoch": epoch, "learning_rate": opt.learning_rate, "loss": _mean_report(reports)})
        log.wall_seconds.append(time.perf_counter() - start)
        if cfg.eval_interval > 0 and (epoch + 1) % cfg.eval_interval == 0:
            from . import evaluation  # local import, evaluation depends on this module

            result = evaluation.evaluate(params, dataset, metric=cfg.metric)
            log.evals.append({"epoch": epoch, "retrieval": result.as_dict()})
    return params, head, log


def _with_contiguous_identities(dataset):
    ids = dataset.identities()
    if ids == list(range(len(ids))):
        return dataset
    remap = {ident: local for local, ident in enumerate(ids)}
    clips = [FrameSet(frames=c.frames, identity=remap[c.identity], clip_id=c.clip_id) for c in dataset.clips]
    return replace(dataset, clips=clips)


def _flatten(arrays: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([a.ravel() for a in arrays])


def _assign_flat(arrays: list[np.ndarray], vector: np.ndarray) -> None:
    offset = 0
    for a in arrays:
        a[...] = vector[offset:offset + a.size].reshape(a.shape)
        offset += a.size


def selection_margin(params: EncoderParams, head: ClassifierHead, raw_batch: Batch,
                     cfg: TrainConfig) -> float:
    """Smallest gap protecting any discrete choice in the loss landscape.

    Covers mining runner-up gaps, realizing-pair gaps inside set-distance
    blocks, the hard-positive-set rank boundary, hinge distances from the
    margin boundary, and ReLU pre-activations for the hidden layout. A
    small value means a nearby parameter perturbation may flip a selection,
    making finite differences unreliable.
    """
    encoded, cache = _encode_batch(params, raw_batch)
    margins = [np.inf]
    if params.layout == "hidden":
        margins.append(float(np.abs(cache[1]).min()))

    def gap_of(scores: np.ndarray, pick_max: bool) -> float:
        finite = scores[np.isfinite(scores)]
        if finite.size < 2:
            return np.inf
        top = np.sort(finite)
        return float(top[-1] - top[-2]) if pick_max else float(top[1] - top[0])

    def kink_guard(d: float) -> float:
        # At d == 0 exactly, the zero-vector subgradient matches symmetric
        # central differences, so only near-zero distances are hazardous.
        return float(d) if d > 0.0 else np.inf

    lam_ce, lam_ctri, lam_hpsc, lam_stri = cfg.loss.lambdas
    feats = encoded.clip_features
    labels = encoded.labels
    same = labels[:, None] == labels[None, :]
    eye = np.eye(len(labels), dtype=bool)
    clip_d = sd._pairwise_kernel(feats, feats, cfg.metric)

    def hinge_margin(d_ap: float, d_an: float) -> float:
        return abs(d_ap - d_an + cfg.loss.eta)

    if lam_ctri > 0:
        for tri in mining.hard_mine_clip_triplets(encoded, cfg.metric):
            pos = np.where(same[tri.anchor] & ~eye[tri.anchor], clip_d[tri.anchor], -np.inf)
            neg = np.where(~same[tri.anchor], clip_d[tri.anchor], np.inf)
            margins += [gap_of(pos, True), gap_of(neg, False),
                        hinge_margin(clip_d[tri.anchor, tri.positive], clip_d[tri.anchor, tri.negative]),
                        kink_guard(clip_d[tri.anchor, tri.positive]),
                        kink_guard(clip_d[tri.anchor, tri.negative])]
    if lam_stri > 0 and cfg.use_stri:
        pos_table, neg_table = mining.set_distance_tables(encoded, cfg.metric, cfg.set_kind)
        frames = encoded.frame_tensor
        for tri in mining.hard_mine_set_triplets(encoded, cfg.metric, cfg.set_kind):
            pos = np.where(same[tri.anchor] & ~eye[tri.anchor], pos_table[tri.anchor], -np.inf)
            neg = np.where(~same[tri.anchor], neg_table[tri.anchor], np.inf)
            pos_block = sd._pairwise_kernel(frames[tri.anchor], frames[tri.positive], cfg.metric)
            neg_block = sd._pairwise_kernel(frames[tri.anchor], frames[tri.negative], cfg.metric)
            pos_role, neg_role = losses._SET_ROLES[cfg.set_kind]
            margins += [gap_of(pos, True), gap_of(neg, False),
                        _block_margin(pos_block, pos_role), _block_margin(neg_block, neg_role),
                        hinge_margin(pos_table[tri.anchor, tri.positive], neg_table[tri.anchor, tri.negative]),
                        kink_guard(pos_block.min()), kink_guard(neg_block.min())]
    if lam_hpsc > 0 and cfg.use_hpsc:
        global_of = dict(zip(encoded.labels.tolist(), encoded.global_labels.tolist()))
        for pair in mining.build_hard_positive_pairs(encoded, head):
            pool = np.concatenate([encoded.clips[i].frames
                                   for i in np.flatnonzero(labels == pair.label)])
            probs = losses.class_probabilities(pool, head)[:, global_of[pair.label]]
            ranked = np.sort(probs)
            t = len(pair.selected_indices)
            if len(ranked) > t:
                margins.append(float(ranked[t] - ranked[t - 1]))
            anchor = feats[pair.anchor_clip]
            neg_idx = mining.mine_hard_negative_clip(anchor, encoded, pair.label, cfg.metric)
            neg_scores = np.where(labels != pair.label,
                                  sd._pairwise_kernel(anchor[None], feats, cfg.metric)[0], np.inf)
            d_ap, _ = sd.distance_with_grad(anchor, pair.constructed_feature, cfg.metric)
            d_an, _ = sd.distance_with_grad(anchor, feats[neg_idx], cfg.metric)
            margins += [gap_of(neg_scores, False), hinge_margin(d_ap, d_an),
                        kink_guard(d_ap), kink_guard(d_an)]
    return float(min(margins))


def _block_margin(block: np.ndarray, role: str) -> float:
    flat = np.sort(block.ravel())
    if flat.size < 2:
        return np.inf
    if role == "max_pair":
        return float(flat[-1] - flat[-2])
    if role == "min_pair":
        return float(flat[1] - flat[0])
    # hausdorff: guard the direction choice and both inner selections
    row_mins = np.sort(block.min(axis=1))
    col_mins = np.sort(block.min(axis=0))
    parts = [abs(float(row_mins[-1] - col_mins[-1]))]
    if len(row_mins) > 1:
        parts.append(float(row_mins[-1] - row_mins[-2]))
    if len(col_mins) > 1:
        parts.append(float(col_mins[-1] - col_mins[-2]))
    return min(parts)


@dataclass
class GradientCheckReport:
    max_rel_error: float
    mean_rel_error: float
    num_coordinates: int
    jitter_attempts: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def finite_difference_check(params: EncoderParams, head: ClassifierHead, raw_batch: Batch,
                            cfg: TrainConfig, sample_size: int = 64,
                            rng: np.random.Generator | None = None,
                            step: float = 1e-4, tie_threshold: float = 1e-3,
                            analytic_grad: np.ndarray | None = None) -> GradientCheckReport:
    """Compare analytic parameter gradients against central differences.

    Coordinates are sampled from the concatenated (encoder, prototypes)
    vector. If any discrete selection sits closer than ``tie_threshold`` to
    a flip, the raw batch is jittered by uniform +-1e-6 noise and re-mined,
    up to 10 attempts.
    """
    rng = rng or np.random.default_rng(0)
    batch = raw_batch
    attempts = 0
    while selection_margin(params, head, batch, cfg) < tie_threshold:
        attempts += 1
        if attempts > 10:
            raise RuntimeError(
                "selection ties persist after 10 jitter attempts; "
                "re-generate the batch or jitter inputs more aggressively")
        jittered = [FrameSet(frames=c.frames + rng.uniform(-1e-6, 1e-6, size=c.frames.shape),
                             identity=c.identity, clip_id=c.clip_id) for c in batch.clips]
        batch = Batch.from_clips(jittered, identity_map=raw_batch.identity_map)

    arrays = params.weights + [head.prototypes]
    if analytic_grad is None:
        _, grads = batch_forward_backward(params, head, batch, cfg)
        analytic_grad = _flatten(grads)
    theta0 = _flatten(arrays)
    total = theta0.size
    coords = rng.choice(total, size=min(sample_size, total), replace=False)

    work_params = params.copy()
    work_head = ClassifierHead(head.prototypes.copy())
    work_arrays = work_params.weights + [work_head.prototypes]

    def loss_at(vec: np.ndarray) -> float:
        _assign_flat(work_arrays, vec)
        return batch_loss(work_params, work_head, batch, cfg).total

    errors = []
    for c in coords:
        probe = theta0.copy()
        probe[c] = theta0[c] + step
        up = loss_at(probe)
        probe[c] = theta0[c] - step
        down = loss_at(probe)
        fd = (up - down) / (2.0 * step)
        an = analytic_grad[c]
        errors.append(abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    errors = np.array(errors)
    return GradientCheckReport(max_rel_error=float(errors.max()),
                               mean_rel_error=float(errors.mean()),
                               num_coordinates=len(coords),
                               jitter_attempts=attempts)
