import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from steerers.descriptor import upsift_steerer
from steerers.group_reps import Steerer, build_fixed_steerer
from steerers.matcher import (
    MatcherConfig,
    dual_softmax,
    match_dual_softmax,
    match_invariant_projection,
    match_max_matches,
    match_max_similarity,
    match_procrustes,
    match_prototype_procrustes,
    match_subset,
    mutual_nn_matches,
    procrustes_2x2,
)

from oracles import (dual_softmax_mp, mutual_nn_bruteforce, procrustes_grid, random_orthogonal,
                     random_unit_columns, rotation)


def planar(y):
    """(D, N) -> (N, 2, D/2) with dimensions (2b, 2b+1) forming a planar vector."""
    return y.T.reshape(y.shape[1], -1, 2).transpose(0, 2, 1)


def rotate_planar(y, R):
    p = np.einsum("ij,njb->nib", R, planar(y))
    return p.transpose(0, 2, 1).reshape(y.shape[1], -1).T


@pytest.fixture
def planted():
    rng = np.random.default_rng(0)
    y1 = random_unit_columns(128, 256, rng)
    return y1, upsift_steerer()


class TestConfig:
    @pytest.mark.parametrize("kw", [{"inverse_temperature": 0}, {"similarity_threshold": 1.0},
                                    {"similarity_threshold": -0.1}, {"subset_size": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            MatcherConfig(**kw)


class TestDualSoftmax:
    def test_single_entry(self):
        assert dual_softmax(np.array([[0.3]]))[0, 0] == 1.0

    def test_two_by_two_closed_form(self):
        P = dual_softmax(np.eye(2))
        e = math.exp(20)
        np.testing.assert_allclose(np.diag(P), (e / (e + 1)) ** 2, rtol=1e-14)
        np.testing.assert_allclose(P[0, 1], (1 / (e + 1)) ** 2, rtol=1e-12)

    @pytest.mark.parametrize("iota", [1.0, 20.0, 100.0])
    def test_high_precision_reference(self, iota):
        rng = np.random.default_rng(int(iota))
        Y = rng.uniform(-1, 1, size=(16, 16))
        ours = dual_softmax(Y, MatcherConfig(inverse_temperature=iota))
        ref = dual_softmax_mp(Y, iota)
        assert np.all(np.isfinite(ours))
        assert np.max(np.abs(ours - ref) / ref) < 1e-12

    def test_row_and_column_sums_at_most_one(self):
        P = dual_softmax(np.random.default_rng(1).uniform(-1, 1, (7, 5)))
        assert np.all(P.sum(axis=0) <= 1 + 1e-12) and np.all(P.sum(axis=1) <= 1 + 1e-12)
        assert np.all((P >= 0) & (P <= 1))

    def test_large_inputs_do_not_overflow(self):
        P = dual_softmax(np.full((3, 3), 1.0), MatcherConfig(inverse_temperature=1e4))
        assert np.all(np.isfinite(P))


class TestMutualNN:
    def test_identity(self):
        ms = mutual_nn_matches(np.eye(4))
        assert ms.as_set() == {(i, i) for i in range(4)}

    def test_all_equal_gives_nothing(self):
        assert len(mutual_nn_matches(np.full((3, 3), 0.5))) == 0

    def test_threshold(self):
        assert len(mutual_nn_matches(np.diag([0.5, 0.005]))) == 1

    def test_random_matches_bruteforce(self):
        P = np.random.default_rng(2).random((5, 7))
        assert mutual_nn_matches(P).as_set() == mutual_nn_bruteforce(P, 0.01)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                  elements=st.sampled_from([0.0, 0.2, 0.5, 0.7, 1.0])))
    def test_property_against_bruteforce(self, P):
        ms = mutual_nn_matches(P)
        assert ms.as_set() == mutual_nn_bruteforce(P, 0.01)
        assert len(set(ms.pairs[:, 0])) == len(ms) == len(set(ms.pairs[:, 1]))


class TestMaxMatches:
    def test_planted_rotation(self, planted):
        y1, s = planted
        y2 = s.matrix @ y1
        ms = match_max_matches(y1, y2, s)
        # the second set is steered; rho^3 undoes rho
        assert ms.steering_power == 3
        assert ms.as_set() == {(i, i) for i in range(256)}

    @pytest.mark.parametrize("k", range(4))
    def test_selects_true_power(self, planted, k):
        y1, s = planted
        y2 = np.linalg.matrix_power(s.matrix.T, k) @ y1
        assert match_max_matches(y1, y2, s).steering_power == k

    def test_identity_steerer(self):
        y = random_unit_columns(16, 20, np.random.default_rng(3))
        ms = match_max_matches(y, y, Steerer(np.eye(16), 4))
        assert ms.steering_power == 0 and ms.as_set() == {(i, i) for i in range(20)}

    def test_cardinality_is_maximal(self, planted):
        y1, s = planted
        rng = np.random.default_rng(4)
        y2 = s.matrix @ (y1 + 0.3 * rng.normal(size=y1.shape))
        ms = match_max_matches(y1, y2, s)
        assert len(ms) == max(ms.diagnostics["matches_per_power"])


class TestMaxSimilarity:
    def test_identity_steerer_equals_plain(self):
        rng = np.random.default_rng(5)
        y1, y2 = random_unit_columns(8, 12, rng), random_unit_columns(8, 10, rng)
        a = match_max_similarity(y1, y2, Steerer(np.eye(8), 1))
        b = match_dual_softmax(y1, y2)
        assert a.as_set() == b.as_set()

    def test_planted_diagonal_is_one(self, planted):
        y1, s = planted
        ms = match_max_similarity(y1, s.matrix @ y1, s)
        assert ms.as_set() == {(i, i) for i in range(256)}
        np.testing.assert_allclose(ms.similarity, 1.0, atol=1e-9)

    def test_dominance(self, planted):
        y1, s = planted
        rng = np.random.default_rng(6)
        y2 = random_unit_columns(128, 50, rng)
        ms = match_max_similarity(y1[:, :40], y2, s)
        for k in range(4):
            Yk = y1[:, :40].T @ np.linalg.matrix_power(s.matrix, k) @ y2
            assert np.all(ms.similarity >= Yk[ms.pairs[:, 0], ms.pairs[:, 1]] - 1e-15)


class TestSubset:
    def test_full_subset_matches_max_matches(self, planted):
        y1, s = planted
        y2 = s.matrix @ y1
        a = match_subset(y1, y2, s, MatcherConfig(subset_size=1000))
        b = match_max_matches(y1, y2, s)
        assert a.steering_power == b.steering_power and a.as_set() == b.as_set()

    def test_small_subset_large_set(self):
        rng = np.random.default_rng(7)
        s = upsift_steerer()
        y1 = random_unit_columns(128, 2000, rng)
        y2 = np.linalg.matrix_power(s.matrix.T, 2) @ y1
        cfg = MatcherConfig(subset_size=100)
        ms = match_subset(y1, y2, s, cfg)
        assert ms.steering_power == 2
        assert ms.diagnostics["similarity_evaluations"] == 4 * 100 * 100 + 2000 * 2000
        assert len(ms) >= 0.99 * 2000


class TestInvariant:
    def test_identity_steerer_equals_plain(self):
        rng = np.random.default_rng(8)
        y1, y2 = random_unit_columns(8, 12, rng), random_unit_columns(8, 10, rng)
        assert match_invariant_projection(y1, y2, Steerer(np.eye(8), 4)).as_set() == \
            match_dual_softmax(y1, y2).as_set()

    def test_steered_copy_scores_one(self, planted):
        y1, s = planted
        ms = match_invariant_projection(y1, s.matrix @ y1, s)
        np.testing.assert_allclose(ms.similarity, 1.0, atol=1e-9)

    def test_lower_margin_than_max_matches(self):
        rng = np.random.default_rng(9)
        s = build_fixed_steerer("perm", 64)
        y1 = random_unit_columns(64, 100, rng)
        y2 = s.matrix @ y1
        inv = match_invariant_projection(y1, y2, s)
        mm = match_max_matches(y1, y2, s)
        assert inv.as_set() == {(i, i) for i in range(100)}

        def margin(ms, Y):
            Y = Y.copy()
            best = Y[ms.pairs[:, 0], ms.pairs[:, 1]].copy()
            Y[ms.pairs[:, 0], ms.pairs[:, 1]] = -np.inf
            return float(np.mean(best - Y[ms.pairs[:, 0]].max(axis=1)))

        Pi = np.kron(np.eye(16), np.full((4, 4), 0.25))
        z1, z2 = Pi @ y1, Pi @ y2
        z1, z2 = z1 / np.linalg.norm(z1, axis=0), z2 / np.linalg.norm(z2, axis=0)
        steered = y1.T @ np.linalg.matrix_power(s.matrix, mm.steering_power) @ y2
        assert margin(inv, z1.T @ z2) < margin(mm, steered)

    def test_everything_annihilated(self):
        s = Steerer(-np.eye(2), 2)
        ms = match_invariant_projection(np.eye(2), np.eye(2), s)
        assert len(ms) == 0 and "note" in ms.diagnostics


class TestProcrustes:
    def test_planted_global_rotation(self):
        rng = np.random.default_rng(10)
        y1 = random_unit_columns(16, 32, rng)
        R = rotation(1.1)
        ms = match_procrustes(y1, rotate_planar(y1, R))
        assert ms.as_set() == {(i, i) for i in range(32)}
        for Rm in ms.per_match_rotation:
            np.testing.assert_allclose(Rm, R, atol=1e-8)

    def test_zero_cross_covariance(self):
        R, value = procrustes_2x2(np.zeros((3, 2, 2)))
        np.testing.assert_array_equal(value, 0.0)
        np.testing.assert_allclose(R, np.broadcast_to(np.eye(2), (3, 2, 2)))

    def test_rotations_are_proper(self):
        C = np.random.default_rng(11).normal(size=(50, 2, 2))
        R, _ = procrustes_2x2(C)
        np.testing.assert_allclose(np.linalg.det(R), 1.0)

    def test_grid_oracle_on_all_pairs(self):
        rng = np.random.default_rng(12)
        y1, y2 = random_unit_columns(16, 32, rng), random_unit_columns(16, 32, rng)
        a, b = planar(y1), planar(y2)
        C = np.einsum("nib,mjb->mnij", b, a)
        _, value = procrustes_2x2(C)
        for m in range(32):
            for n in range(32):
                ref, _ = procrustes_grid(a[m], b[n])
                assert ref <= value[m, n] + 1e-12
                assert abs(value[m, n] - ref) < 1e-5

    def test_odd_dimension_rejected(self):
        with pytest.raises(ValueError):
            match_procrustes(np.ones((3, 2)), np.ones((3, 2)))


class TestPrototype:
    def test_agrees_with_pairwise_procrustes(self):
        rng = np.random.default_rng(13)
        # descriptions share a dominant planar pattern so the prototype is well conditioned
        base = rng.normal(size=(16, 1))
        y1 = base + 0.8 * rng.normal(size=(16, 24))
        y1 /= np.linalg.norm(y1, axis=0)
        y2 = rotate_planar(y1, rotation(0.8))
        proto = match_prototype_procrustes(y1, y2, calibration=y1)
        full = match_procrustes(y1, y2)
        assert not any(proto.diagnostics["ill_conditioned"][0])
        assert proto.as_set() == full.as_set() == {(i, i) for i in range(24)}
        for Rm in proto.per_match_rotation:
            np.testing.assert_allclose(Rm, rotation(0.8), atol=1e-8)

    def test_aligned_set_gets_identity(self):
        p = np.zeros(4)
        p[0] = 1.0
        y = np.array([[1.0, 0.6], [0.0, 0.0], [0.0, 0.8], [0.0, 0.0]])
        ms = match_prototype_procrustes(y, y, prototype=p)
        for Rm in ms.per_match_rotation:
            np.testing.assert_allclose(Rm, np.eye(2), atol=1e-12)

    def test_orthogonal_description_flagged(self):
        p = np.array([1.0, 0.0, 0.0, 0.0])
        y = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        ms = match_prototype_procrustes(y, y, prototype=p)
        assert ms.diagnostics["ill_conditioned"] == [[1], [1]]

    def test_zero_prototype_rejected(self):
        with pytest.raises(ValueError):
            match_prototype_procrustes(np.eye(4), np.eye(4), prototype=np.zeros(4))


class TestInvariants:
    def test_joint_orthogonal_steering_invariance(self):
        rng = np.random.default_rng(14)
        y1, y2 = random_unit_columns(12, 30, rng), random_unit_columns(12, 30, rng)
        y2[:, :10] = y1[:, :10] + 0.05 * rng.normal(size=(12, 10))
        Q = random_orthogonal(12, rng)
        assert match_dual_softmax(Q @ y1, Q @ y2).as_set() == match_dual_softmax(y1, y2).as_set()

    def test_json_shape(self, planted):
        y1, s = planted
        ms = match_max_matches(y1[:, :8], s.matrix @ y1[:, :8], s)
        doc = json.loads(ms.to_json())
        assert set(doc) == {"strategy", "steering_power_or_angle", "matches", "diagnostics"}
        assert doc["steering_power_or_angle"] == 3
        assert len(doc["matches"]) == 8 and len(doc["matches"][0]) == 3
