import math

import numpy as np
import pytest

from setmetric import set_distance as sd
from setmetric.set_distance import AggregationConfig, FrameSet
from setmetric.verify import (
    ORACLES,
    oracle_diameter,
    oracle_hausdorff,
    random_frame_set,
)


def fs(*rows):
    return FrameSet(np.array(rows, dtype=float))


A = fs([0.0], [2.0])
B = fs([1.0], [5.0])


class TestBaseDistance:
    def test_hand_values(self):
        assert sd.base_distance(np.array([0.0]), np.array([3.0])) == 3.0
        assert sd.base_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(math.sqrt(2), abs=1e-15)

    def test_identity_is_zero(self):
        v = np.array([0.3, -1.7, 4.0])
        assert sd.base_distance(v, v) == 0.0

    def test_squared_euclidean(self):
        assert sd.base_distance(np.array([0.0]), np.array([3.0]), "squared_euclidean") == 9.0

    def test_dimension_mismatch_names_both(self):
        with pytest.raises(ValueError, match="2 vs 3"):
            sd.base_distance(np.zeros(2), np.zeros(3))

    def test_unknown_metric(self):
        with pytest.raises(ValueError, match="unknown base metric"):
            sd.base_distance(np.zeros(2), np.zeros(2), "cosine")


class TestPairwiseMatrix:
    def test_enumerated_1d(self):
        assert np.array_equal(sd.pairwise_matrix(A, B), [[1.0, 5.0], [1.0, 3.0]])

    def test_singleton(self):
        v = fs([4.0, -1.0])
        assert np.array_equal(sd.pairwise_matrix(v, v), [[0.0]])

    def test_one_against_three(self):
        assert np.array_equal(sd.pairwise_matrix(fs([0.0]), fs([1.0], [2.0], [3.0])), [[1.0, 2.0, 3.0]])

    def test_entries_bit_equal_scalar_path(self):
        rng = np.random.default_rng(0)
        xs = random_frame_set(rng, 5, 3)
        ys = random_frame_set(rng, 4, 3)
        m = sd.pairwise_matrix(xs, ys)
        for i in range(5):
            for j in range(4):
                assert m[i, j] == sd.base_distance(xs.frames[i], ys.frames[j])

    def test_self_matrix_symmetric_zero_diagonal(self):
        rng = np.random.default_rng(1)
        xs = random_frame_set(rng, 6, 2)
        m = sd.pairwise_matrix(xs, xs)
        assert np.array_equal(m, m.T)
        assert np.array_equal(np.diag(m), np.zeros(6))


class TestSetDistances:
    def test_worked_example(self):
        assert sd.ordinary_distance(A, B) == 1.0
        assert sd.hausdorff_distance(A, B) == 3.0
        assert sd.hybrid_positive_distance(A, B) == 5.0
        assert sd.hybrid_negative_distance(A, B) == 1.0

    def test_shared_element_gives_zero_ordinary(self):
        assert sd.ordinary_distance(fs([5.0]), fs([5.0], [9.0])) == 0.0

    def test_identical_sets(self):
        assert sd.hausdorff_distance(A, A) == 0.0
        assert sd.ordinary_distance(A, A) == 0.0
        assert sd.hybrid_positive_distance(A, A) == 2.0

    def test_single_pair_hausdorff(self):
        assert sd.hausdorff_distance(fs([0.0]), fs([10.0])) == 10.0

    def test_hybrid_negative_is_ordinary_by_construction(self):
        assert sd.hybrid_negative_distance(fs([3.0]), fs([3.0])) == 0.0

    def test_dispatch(self):
        assert sd.set_distance(A, B, "ordinary") == 1.0
        assert sd.set_distance(A, B, "hausdorff") == 3.0
        assert sd.set_distance(A, B, "hybrid_positive") == 5.0
        with pytest.raises(ValueError, match="unknown set distance kind"):
            sd.set_distance(A, B, "chamfer")

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            sd.ordinary_distance(A, fs([1.0, 2.0]))

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            FrameSet(np.zeros((0, 2)))


class TestOracleEquivalence:
    def test_matches_sorted_pairs_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            a = random_frame_set(rng)
            b = random_frame_set(rng, dim=a.dim)
            for kind, oracle in ORACLES.items():
                assert sd.set_distance(a, b, kind) == oracle(a, b), kind

    def test_squared_metric_against_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            a = random_frame_set(rng)
            b = random_frame_set(rng, dim=a.dim)
            for kind, oracle in ORACLES.items():
                assert sd.set_distance(a, b, kind, "squared_euclidean") == oracle(a, b, "squared_euclidean")

    def test_diameter_against_double_loop(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            a = random_frame_set(rng)
            assert sd.hybrid_positive_distance(a, a) == oracle_diameter(a)


class TestAlgebraicProperties:
    def test_ordering_chain(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            a = random_frame_set(rng)
            b = random_frame_set(rng, dim=a.dim)
            o = sd.ordinary_distance(a, b)
            h = sd.hausdorff_distance(a, b)
            hp = sd.hybrid_positive_distance(a, b)
            assert o <= h <= hp

    def test_hybrid_negative_bit_equals_ordinary(self):
        rng = np.random.default_rng(12)
        for _ in range(300):
            a = random_frame_set(rng)
            b = random_frame_set(rng, dim=a.dim)
            assert sd.hybrid_negative_distance(a, b) == sd.ordinary_distance(a, b)

    def test_symmetry_exact(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            a = random_frame_set(rng)
            b = random_frame_set(rng, dim=a.dim)
            for kind in sd.SET_DISTANCE_KINDS:
                assert sd.set_distance(a, b, kind) == sd.set_distance(b, a, kind)

    def test_hausdorff_triangle_inequality(self):
        rng = np.random.default_rng(14)
        for _ in range(300):
            dim = int(rng.choice([1, 2, 8]))
            a, b, c = (random_frame_set(rng, dim=dim) for _ in range(3))
            assert sd.hausdorff_distance(a, c) <= sd.hausdorff_distance(a, b) + sd.hausdorff_distance(b, c) + 1e-9

    def test_positive_homogeneity(self):
        rng = np.random.default_rng(15)
        for _ in range(100):
            a = random_frame_set(rng)
            b = random_frame_set(rng, dim=a.dim)
            s = float(rng.uniform(0.1, 10.0))
            sa = FrameSet(a.frames * s)
            sb = FrameSet(b.frames * s)
            for kind in sd.SET_DISTANCE_KINDS:
                want = s * sd.set_distance(a, b, kind)
                got = sd.set_distance(sa, sb, kind)
                assert got == pytest.approx(want, rel=1e-9)

    def test_permutation_invariance_bitwise(self):
        rng = np.random.default_rng(16)
        for _ in range(100):
            a = random_frame_set(rng, size=int(rng.integers(2, 7)))
            b = random_frame_set(rng, dim=a.dim)
            perm = rng.permutation(a.size)
            ap = FrameSet(a.frames[perm])
            for kind in sd.SET_DISTANCE_KINDS:
                assert sd.set_distance(ap, b, kind) == sd.set_distance(a, b, kind)


class TestAggregate:
    def test_uniform_mean(self):
        s = fs([0.0, 0.0], [2.0, 2.0])
        assert np.array_equal(sd.aggregate(s), [1.0, 1.0])

    def test_repeated_vector_is_identity(self):
        v = np.array([1.25, -0.5])
        s = FrameSet(np.tile(v, (4, 1)))
        assert np.allclose(sd.aggregate(s), v, atol=1e-15)

    def test_singleton(self):
        assert np.array_equal(sd.aggregate(fs([4.0])), [4.0])

    def test_permutation_invariance_bitwise(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            s = random_frame_set(rng, size=int(rng.integers(1, 9)), dim=int(rng.integers(1, 5)))
            perm = rng.permutation(s.size)
            assert np.array_equal(sd.aggregate(FrameSet(s.frames[perm])), sd.aggregate(s))

    def test_explicit_weights(self):
        s = fs([0.0], [10.0])
        cfg = AggregationConfig(weights=np.array([0.8, 0.2]))
        assert sd.aggregate(s, cfg) == pytest.approx(2.0)

    def test_weight_validation(self):
        s = fs([0.0], [10.0])
        with pytest.raises(ValueError, match="does not match"):
            sd.aggregate(s, AggregationConfig(weights=np.array([1.0])))
        with pytest.raises(ValueError, match="sum"):
            sd.aggregate(s, AggregationConfig(weights=np.array([0.5, 0.6])))
        with pytest.raises(ValueError, match="nonnegative"):
            sd.aggregate(s, AggregationConfig(weights=np.array([-0.5, 1.5])))


class TestFrameSetValidation:
    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="non-finite"):
            FrameSet(np.array([[np.nan]]))

    def test_rejects_negative_identity(self):
        with pytest.raises(ValueError, match="identity"):
            FrameSet(np.array([[0.0]]), identity=-1)

    def test_1d_input_promoted_to_column(self):
        s = FrameSet(np.array([1.0, 2.0, 3.0]))
        assert s.frames.shape == (3, 1)
