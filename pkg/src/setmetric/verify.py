"""Named self-checks behind the ``verify`` command.

Each check pits a library code path against an independently implemented
oracle (plain-Python enumeration, hand-computed values, or central finite
differences). The oracles deliberately avoid the vectorized kernels they
validate: set distances are re-derived by sorting every pairwise distance,
mining by exhaustive candidate scans, and gradients by numeric probes.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from . import losses, mining, numerics, set_distance as sd, synthdata, trainer
from .losses import ClassifierHead, LossWeights
from .mining import Batch
from .set_distance import FrameSet

CORRUPTIONS = ("hybrid-negative-max", "softmax-unnormalized", "hausdorff-asymmetric")


# ---------------------------------------------------------------------------
# brute-force oracles (shared with the test suite)

def oracle_all_pair_distances(a: FrameSet, b: FrameSet, metric: str = "euclidean") -> list[float]:
    return sorted(sd.base_distance(x, y, metric) for x in a.frames for y in b.frames)


def oracle_ordinary(a: FrameSet, b: FrameSet, metric: str = "euclidean") -> float:
    return oracle_all_pair_distances(a, b, metric)[0]


def oracle_hybrid_positive(a: FrameSet, b: FrameSet, metric: str = "euclidean") -> float:
    return oracle_all_pair_distances(a, b, metric)[-1]


def oracle_hybrid_negative(a: FrameSet, b: FrameSet, metric: str = "euclidean") -> float:
    return oracle_all_pair_distances(a, b, metric)[0]


def oracle_hausdorff(a: FrameSet, b: FrameSet, metric: str = "euclidean") -> float:
    forward = max(min(sd.base_distance(x, y, metric) for y in b.frames) for x in a.frames)
    backward = max(min(sd.base_distance(x, y, metric) for x in a.frames) for y in b.frames)
    return max(forward, backward)


ORACLES = {
    "ordinary": oracle_ordinary,
    "hausdorff": oracle_hausdorff,
    "hybrid_positive": oracle_hybrid_positive,
    "hybrid_negative": oracle_hybrid_negative,
}


def oracle_set_pair_distance(a: FrameSet, b: FrameSet, kind: str, metric: str = "euclidean") -> float:
    return ORACLES[kind](a, b, metric)


def oracle_diameter(a: FrameSet, metric: str = "euclidean") -> float:
    return max(sd.base_distance(x, y, metric) for x in a.frames for y in a.frames)


def oracle_clip_triplets(batch: Batch, metric: str = "euclidean") -> list[tuple[int, int, int]]:
    """Exhaustive batch-hard selection over clip features, ties to lowest index."""
    out = []
    labels = batch.labels
    feats = batch.clip_features
    for i in range(batch.num_clips):
        best_p, best_pd = -1, -math.inf
        best_n, best_nd = -1, math.inf
        for j in range(batch.num_clips):
            d = sd.base_distance(feats[i], feats[j], metric)
            if j != i and labels[j] == labels[i] and d > best_pd:
                best_p, best_pd = j, d
            if labels[j] != labels[i] and d < best_nd:
                best_n, best_nd = j, d
        out.append((i, best_p, best_n))
    return out


def oracle_set_triplets(batch: Batch, metric: str = "euclidean", kind: str = "hybrid") -> list[tuple[int, int, int]]:
    pos_kind, neg_kind = {
        "hybrid": ("hybrid_positive", "hybrid_negative"),
        "ordinary": ("ordinary", "ordinary"),
        "hausdorff": ("hausdorff", "hausdorff"),
    }[kind]
    out = []
    labels = batch.labels
    for i in range(batch.num_clips):
        best_p, best_pd = -1, -math.inf
        best_n, best_nd = -1, math.inf
        for j in range(batch.num_clips):
            if j != i and labels[j] == labels[i]:
                d = oracle_set_pair_distance(batch.clips[i], batch.clips[j], pos_kind, metric)
                if d > best_pd:
                    best_p, best_pd = j, d
            if labels[j] != labels[i]:
                d = oracle_set_pair_distance(batch.clips[i], batch.clips[j], neg_kind, metric)
                if d < best_nd:
                    best_n, best_nd = j, d
        out.append((i, best_p, best_n))
    return out


def oracle_lowest_probability_indices(probs: np.ndarray, t: int) -> list[int]:
    """First t entries of a stable ascending sort of the probabilities."""
    return [i for _, i in sorted((float(p), i) for i, p in enumerate(probs))][:t]


def oracle_average_precision(relevance: list[bool]) -> float:
    hits = 0
    total = 0.0
    for rank, rel in enumerate(relevance, start=1):
        if rel:
            hits += 1
            total += hits / rank
    return total / hits


# ---------------------------------------------------------------------------
# randomized fixtures

def random_frame_set(rng: np.random.Generator, size: int | None = None, dim: int | None = None,
                     identity: int = 0, clip_id: int = 0, scale: float = 2.0) -> FrameSet:
    size = size or int(rng.integers(1, 7))
    dim = dim or int(rng.choice([1, 2, 8]))
    return FrameSet(frames=rng.normal(0.0, scale, size=(size, dim)), identity=identity, clip_id=clip_id)


def random_batch(rng: np.random.Generator, p: int = 2, k: int = 2, t: int = 3, dim: int = 4) -> Batch:
    clips = []
    for label in range(p):
        center = rng.normal(0.0, 3.0, size=dim)
        for j in range(k):
            frames = center + rng.normal(0.0, 1.0, size=(t, dim))
            clips.append(FrameSet(frames=frames, identity=label, clip_id=label * k + j))
    return Batch.from_clips(clips)


# ---------------------------------------------------------------------------
# checks

def check_base_distance_values():
    assert sd.base_distance(np.array([0.0]), np.array([3.0])) == 3.0
    v = np.array([1.5, -2.0, 0.25])
    assert sd.base_distance(v, v) == 0.0
    got = sd.base_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert abs(got - math.sqrt(2.0)) < 1e-15, got
    try:
        sd.base_distance(np.array([1.0]), np.array([1.0, 2.0]))
    except ValueError as exc:
        assert "1" in str(exc) and "2" in str(exc)
    else:
        raise AssertionError("dimension mismatch not rejected")


def check_pairwise_matrix():
    a = FrameSet(np.array([[0.0], [2.0]]))
    b = FrameSet(np.array([[1.0], [5.0]]))
    assert np.array_equal(sd.pairwise_matrix(a, b), np.array([[1.0, 5.0], [1.0, 3.0]]))
    single = FrameSet(np.array([[4.0, 4.0]]))
    assert np.array_equal(sd.pairwise_matrix(single, single), np.array([[0.0]]))
    rng = np.random.default_rng(7)
    xs = random_frame_set(rng, 4, 3)
    ys = random_frame_set(rng, 5, 3)
    m = sd.pairwise_matrix(xs, ys)
    for i in range(4):
        for j in range(5):
            assert m[i, j] == sd.base_distance(xs.frames[i], ys.frames[j])


def check_set_distance_hand_values():
    a = FrameSet(np.array([[0.0], [2.0]]))
    b = FrameSet(np.array([[1.0], [5.0]]))
    assert sd.ordinary_distance(a, b) == 1.0
    assert sd.hausdorff_distance(a, b) == 3.0
    assert sd.hybrid_positive_distance(a, b) == 5.0
    assert sd.hybrid_negative_distance(a, b) == 1.0
    assert sd.set_distance(a, b, "ordinary") == 1.0
    assert sd.hausdorff_distance(a, a) == 0.0
    assert sd.hybrid_positive_distance(a, a) == 2.0  # diameter


def check_set_distance_oracle():
    rng = np.random.default_rng(11)
    for _ in range(200):
        a = random_frame_set(rng)
        b = random_frame_set(rng, dim=a.dim)
        for kind, oracle in ORACLES.items():
            got = sd.set_distance(a, b, kind)
            want = oracle(a, b)
            assert got == want, f"{kind}: {got} != oracle {want}"


def check_set_distance_ordering():
    rng = np.random.default_rng(13)
    for _ in range(200):
        a = random_frame_set(rng)
        b = random_frame_set(rng, dim=a.dim)
        o = sd.ordinary_distance(a, b)
        h = sd.hausdorff_distance(a, b)
        hp = sd.hybrid_positive_distance(a, b)
        assert o <= h <= hp, (o, h, hp)


def check_hybrid_negative_equals_ordinary():
    rng = np.random.default_rng(17)
    for _ in range(200):
        a = random_frame_set(rng)
        b = random_frame_set(rng, dim=a.dim)
        assert sd.hybrid_negative_distance(a, b) == sd.ordinary_distance(a, b)


def check_set_distance_symmetry():
    rng = np.random.default_rng(19)
    for _ in range(100):
        a = random_frame_set(rng)
        b = random_frame_set(rng, dim=a.dim)
        for kind in sd.SET_DISTANCE_KINDS:
            assert sd.set_distance(a, b, kind) == sd.set_distance(b, a, kind), kind
    a = FrameSet(np.array([[0.0], [2.0]]))
    b = FrameSet(np.array([[1.0], [5.0]]))
    assert sd.hausdorff_distance(a, b) == sd.hausdorff_distance(b, a) == 3.0


def check_hausdorff_triangle():
    rng = np.random.default_rng(23)
    for _ in range(200):
        dim = int(rng.choice([1, 2, 8]))
        a = random_frame_set(rng, dim=dim)
        b = random_frame_set(rng, dim=dim)
        c = random_frame_set(rng, dim=dim)
        ab = sd.hausdorff_distance(a, b)
        bc = sd.hausdorff_distance(b, c)
        ac = sd.hausdorff_distance(a, c)
        assert ac <= ab + bc + 1e-9, (ac, ab, bc)


def check_aggregate_permutation_invariance():
    rng = np.random.default_rng(29)
    for _ in range(100):
        s = random_frame_set(rng, size=int(rng.integers(1, 8)), dim=int(rng.integers(1, 6)))
        base = sd.aggregate(s)
        perm = rng.permutation(s.size)
        shuffled = FrameSet(frames=s.frames[perm], identity=s.identity, clip_id=s.clip_id)
        assert np.array_equal(sd.aggregate(shuffled), base)
        for kind in sd.SET_DISTANCE_KINDS:
            other = random_frame_set(rng, dim=s.dim)
            assert sd.set_distance(shuffled, other, kind) == sd.set_distance(s, other, kind)


def check_clip_mining_oracle():
    rng = np.random.default_rng(31)
    for _ in range(50):
        batch = random_batch(rng, p=int(rng.integers(2, 4)), k=int(rng.integers(2, 4)))
        got = [(t.anchor, t.positive, t.negative) for t in mining.hard_mine_clip_triplets(batch)]
        assert got == oracle_clip_triplets(batch)


def check_set_mining_oracle():
    rng = np.random.default_rng(37)
    for _ in range(30):
        batch = random_batch(rng, p=2, k=3, t=int(rng.integers(1, 4)))
        for kind in ("hybrid", "ordinary", "hausdorff"):
            got = [(t.anchor, t.positive, t.negative) for t in mining.hard_mine_set_triplets(batch, kind=kind)]
            assert got == oracle_set_triplets(batch, kind=kind), kind


def check_hard_positive_selection_oracle():
    rng = np.random.default_rng(41)
    for _ in range(50):
        pool = int(rng.integers(2, 17))
        t = int(rng.integers(1, pool + 1))
        n_classes = int(rng.integers(2, 6))
        dim = 4
        frames = rng.normal(0.0, 1.0, size=(pool, dim))
        protos = rng.normal(0.0, 1.0, size=(dim, n_classes))
        label = int(rng.integers(n_classes))
        selected, feature = mining.construct_hard_positive_set(frames, label, protos, t)
        probs = numerics.softmax(frames @ protos)[:, label]
        assert selected.tolist() == oracle_lowest_probability_indices(probs, t)
        assert np.array_equal(feature, sd.aggregate_rows(frames[selected]))
    # explicit tie: equal probabilities pick the lowest indices
    frames = np.zeros((4, 2))
    protos = np.zeros((2, 3))
    selected, _ = mining.construct_hard_positive_set(frames, 1, protos, 2)
    assert selected.tolist() == [0, 1]


def check_class_probability_normalization():
    rng = np.random.default_rng(43)
    head = ClassifierHead(rng.normal(0.0, 1.0, size=(6, 5)))
    feats = rng.normal(0.0, 2.0, size=(20, 6))
    probs = losses.class_probabilities(feats, head)
    assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-12
    shifted = numerics.softmax(feats @ head.prototypes + 7.25)
    assert np.abs(shifted - probs).max() < 1e-9, "softmax must be shift invariant"
    two = ClassifierHead(np.zeros((3, 2)))
    loss, _, _ = losses.softmax_cross_entropy(np.ones((4, 3)), np.array([0, 1, 0, 1]), two)
    assert abs(loss - math.log(2.0)) < 1e-12


def check_loss_hand_values():
    # triplet hinge: d_ap 0.5, d_an 0.6, margin 0.3 -> 0.2
    clips = [FrameSet(np.array([[0.0]]), identity=0, clip_id=0),
             FrameSet(np.array([[0.5]]), identity=0, clip_id=1),
             FrameSet(np.array([[0.6]]), identity=1, clip_id=2),
             FrameSet(np.array([[10.0]]), identity=1, clip_id=3)]
    batch = Batch.from_clips(clips)
    weights = LossWeights()
    tri = [mining.TripletIndices(0, 1, 2)]
    value, _, active = losses.clip_triplet_loss_hm(batch, tri, weights)
    assert abs(value - 0.2) < 1e-12 and active == 1

    report = losses.total_loss({"ce": 0.7, "ctri_hm": 0.2, "ctri_hpsc": 0.1, "stri_hm": 0.4}, weights)
    assert abs(report.total - 1.05) < 1e-12

    a = FrameSet(np.array([[0.0], [2.0]]), identity=0, clip_id=0)
    p = FrameSet(np.array([[1.0], [5.0]]), identity=0, clip_id=1)
    n = FrameSet(np.array([[8.0], [9.0]]), identity=1, clip_id=2)
    sbatch = Batch.from_clips([a, p, n, FrameSet(np.array([[8.5], [9.5]]), identity=1, clip_id=3)])
    tri = [mining.TripletIndices(0, 1, 2)]
    value, _, _ = losses.set_triplet_loss_hm(sbatch, tri, weights, kind="hybrid")
    assert value == 0.0
    n2 = FrameSet(np.array([[5.1], [9.0]]), identity=1, clip_id=2)
    sbatch2 = Batch.from_clips([a, p, n2, FrameSet(np.array([[8.5], [9.5]]), identity=1, clip_id=3)])
    value, _, _ = losses.set_triplet_loss_hm(sbatch2, tri, weights, kind="hybrid")
    assert abs(value - 2.2) < 1e-12, value


def check_gradient_finite_difference():
    rng = np.random.default_rng(47)
    gen = synthdata.GeneratorConfig(num_identities=4, clips_per_identity=2, frames_per_clip=3,
                                    input_dim=5, sigma_between=3.0, sigma_within=1.0,
                                    p_occ=0.2, seed=3)
    dataset = synthdata.generate(gen)
    cfg = trainer.TrainConfig(batch=mining.BatchSpec(P=2, K=2, T=3, seed=0),
                              loss=LossWeights(), epochs=1, embedding_dim=4,
                              learning_rate=1e-3, decay_epochs=())
    params = trainer.EncoderParams.create("linear", 5, 4, 8, rng)
    head = ClassifierHead.init(4, 4, rng)
    raw = mining.sample_batch(dataset, cfg.batch, rng)
    report = trainer.finite_difference_check(params, head, raw, cfg, sample_size=40, rng=rng)
    assert report.max_rel_error < 1e-4, report


def check_optimizer_semantics():
    rng = np.random.default_rng(53)
    w = rng.normal(size=(3, 2))
    snapshot = w.copy()
    opt = trainer.OptimizerState.for_params([w], learning_rate=0.1)
    trainer.optimizer_step(opt, [w], [np.zeros_like(w)])
    assert np.array_equal(w, snapshot), "zero gradient must be a no-op"
    opt = trainer.OptimizerState.for_params([w], learning_rate=0.0)
    trainer.optimizer_step(opt, [w], [rng.normal(size=(3, 2))])
    assert np.array_equal(w, snapshot), "zero learning rate must be a no-op"


def check_retrieval_sanity():
    from . import evaluation

    gen = synthdata.GeneratorConfig(num_identities=6, clips_per_identity=4, frames_per_clip=3,
                                    input_dim=4, sigma_between=5.0, sigma_within=0.01,
                                    p_occ=0.0, seed=1)
    dataset = synthdata.generate(gen)
    result = evaluation.evaluate(trainer.EncoderParams.identity(4), dataset)
    assert result.rank1 == 1.0 and result.map == 1.0, (result.rank1, result.map)
    assert all(x <= y + 1e-15 for x, y in zip(result.cmc, result.cmc[1:])), "CMC must be nondecreasing"
    assert oracle_average_precision([True, False, True]) == (1.0 + 2.0 / 3.0) / 2.0


def check_sampling_determinism():
    gen = synthdata.GeneratorConfig(num_identities=5, clips_per_identity=3, frames_per_clip=2,
                                    input_dim=3, seed=9)
    d1, d2 = synthdata.generate(gen), synthdata.generate(gen)
    assert all(np.array_equal(a.frames, b.frames) for a, b in zip(d1.clips, d2.clips))
    spec = mining.BatchSpec(P=2, K=2, T=2)
    b1 = mining.sample_batch(d1, spec, np.random.default_rng(4))
    b2 = mining.sample_batch(d1, spec, np.random.default_rng(4))
    assert np.array_equal(b1.clip_features, b2.clip_features)
    assert np.array_equal(b1.labels, b2.labels)


CHECKS = [
    ("base-distance-values", check_base_distance_values),
    ("pairwise-matrix-enumeration", check_pairwise_matrix),
    ("set-distance-hand-values", check_set_distance_hand_values),
    ("set-distance-oracle", check_set_distance_oracle),
    ("set-distance-ordering", check_set_distance_ordering),
    ("hybrid-negative-equals-ordinary", check_hybrid_negative_equals_ordinary),
    ("set-distance-symmetry", check_set_distance_symmetry),
    ("hausdorff-triangle-inequality", check_hausdorff_triangle),
    ("aggregate-permutation-invariance", check_aggregate_permutation_invariance),
    ("clip-mining-oracle", check_clip_mining_oracle),
    ("set-mining-oracle", check_set_mining_oracle),
    ("hard-positive-selection-oracle", check_hard_positive_selection_oracle),
    ("class-probability-normalization", check_class_probability_normalization),
    ("loss-hand-values", check_loss_hand_values),
    ("gradient-finite-difference", check_gradient_finite_difference),
    ("optimizer-semantics", check_optimizer_semantics),
    ("retrieval-sanity", check_retrieval_sanity),
    ("sampling-determinism", check_sampling_determinism),
]


@contextlib.contextmanager
def corrupted(name: str | None):
    """Deliberately break one primitive, for mutation-testing the checks."""
    if name is None:
        yield
        return
    if name == "hybrid-negative-max":
        original = sd.hybrid_negative_distance

        def broken(a, b, metric="euclidean"):
            return float(sd.pairwise_matrix(a, b, metric).max())

        sd.hybrid_negative_distance = broken
        try:
            yield
        finally:
            sd.hybrid_negative_distance = original
    elif name == "softmax-unnormalized":
        original = numerics.softmax

        def broken(logits):
            logits = np.asarray(logits, dtype=np.float64)
            return np.exp(logits - logits.max(axis=-1, keepdims=True))

        numerics.softmax = broken
        try:
            yield
        finally:
            numerics.softmax = original
    elif name == "hausdorff-asymmetric":
        original = sd.hausdorff_distance

        def broken(a, b, metric="euclidean"):
            return float(sd.pairwise_matrix(a, b, metric).min(axis=1).max())

        sd.hausdorff_distance = broken
        try:
            yield
        finally:
            sd.hausdorff_distance = original
    else:
        raise ValueError(f"unknown corruption {name!r}, expected one of {CORRUPTIONS}")


def run_checks(corruption: str | None = None) -> list[tuple[str, bool, str]]:
    """Run every named check; returns (name, passed, detail) rows."""
    rows = []
    with corrupted(corruption):
        for name, fn in CHECKS:
            try:
                fn()
            except Exception as exc:  # noqa: BLE001 - report, do not crash the table
                rows.append((name, False, f"{type(exc).__name__}: {exc}"))
            else:
                rows.append((name, True, "ok"))
    return rows
