import math

import numpy as np
import pytest

from anchorreg.anchors import generate_anchors
from anchorreg.metrics import (
    SEPARABILITY_CAP,
    build_report,
    class_centroids,
    compactness,
    cross_seed_consistency,
    dependency_matrix,
    hbt_groups,
    hbt_summary,
    per_class_accuracy,
    separability,
)


class TestPerClassAccuracy:
    def test_all_correct(self):
        np.testing.assert_array_equal(per_class_accuracy([0, 1, 2, 2], [0, 1, 2, 2], 3), [1.0, 1.0, 1.0])

    def test_counting(self):
        np.testing.assert_array_equal(per_class_accuracy([0, 1, 1], [0, 0, 1], 2), [0.5, 1.0])

    def test_absent_class_is_nan(self):
        acc = per_class_accuracy([0, 0], [0, 0], 3)
        assert acc[0] == 1.0 and np.isnan(acc[1]) and np.isnan(acc[2])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            per_class_accuracy([0, 1], [0], 2)


class TestHeadBodyTail:
    def test_uniform(self):
        assert hbt_summary(np.full(6, 0.7), np.full(6, 10)) == pytest.approx((0.7, 0.7, 0.7))

    def test_three_classes(self):
        h, b, t = hbt_summary([0.9, 0.6, 0.3], [100, 10, 1])
        assert (h, b, t) == pytest.approx((0.9, 0.6, 0.3))

    def test_sorted_by_count_not_index(self):
        h, b, t = hbt_summary([0.3, 0.6, 0.9], [1, 10, 100])
        assert (h, b, t) == pytest.approx((0.9, 0.6, 0.3))

    def test_nine_classes_exact_tertiles(self):
        groups = hbt_groups(np.arange(9, 0, -1))
        assert [len(g) for g in groups] == [3, 3, 3]
        assert groups[0].tolist() == [0, 1, 2] and groups[2].tolist() == [6, 7, 8]

    @pytest.mark.parametrize("C,sizes", [(10, [4, 3, 3]), (11, [4, 4, 3]), (4, [2, 1, 1]), (5, [2, 2, 1])])
    def test_remainder_head_first(self, C, sizes):
        assert [len(g) for g in hbt_groups(np.arange(C, 0, -1))] == sizes

    def test_ties_broken_by_index(self):
        head, body, tail = hbt_groups([5, 5, 5])
        assert (head.tolist(), body.tolist(), tail.tolist()) == ([0], [1], [2])

    def test_two_classes_have_no_body(self):
        h, b, t = hbt_summary([1.0, 0.0], [10, 1])
        assert (h, t) == (1.0, 0.0) and math.isnan(b)

    def test_equal_groups_average_back(self):
        rng = np.random.default_rng(0)
        acc = rng.uniform(size=9)
        h, b, t = hbt_summary(acc, rng.permutation(9) + 1)
        assert (h + b + t) / 3 == pytest.approx(acc.mean(), abs=1e-12)


class TestCompactnessSeparability:
    def test_points_at_centroids(self):
        F = np.array([[0.0, 0.0], [0.0, 0.0], [3.0, 4.0]])
        y = np.array([0, 0, 1])
        assert compactness(F, y) == 0.0
        assert separability(F, y) == SEPARABILITY_CAP

    def test_centroid_distance_five(self):
        F = np.array([[-1.0, 0.0], [1.0, 0.0], [3.0, 3.0], [3.0, 5.0]])
        y = np.array([0, 0, 1, 1])
        cent, _ = class_centroids(F, y)
        assert np.linalg.norm(cent[0] - cent[1]) == 5.0
        assert compactness(F, y) == 1.0
        assert separability(F, y) == 5.0

    def test_permutation_invariant(self):
        rng = np.random.default_rng(1)
        F = rng.normal(size=(30, 4))
        y = np.arange(30) % 3
        perm = rng.permutation(30)
        assert compactness(F[perm], y[perm]) == pytest.approx(compactness(F, y), rel=1e-12)
        assert separability(F[perm], y[perm]) == pytest.approx(separability(F, y), rel=1e-12)

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            compactness(np.ones((3, 2)), [0, 0, 0])

    def test_scale_invariant_separability(self):
        rng = np.random.default_rng(2)
        F = rng.normal(size=(20, 3))
        y = np.arange(20) % 4
        assert separability(7.0 * F, y) == pytest.approx(separability(F, y), rel=1e-12)


class TestDependency:
    def test_orthogonal(self):
        np.testing.assert_allclose(dependency_matrix(np.eye(3) * 2.0), np.eye(3), atol=0)

    def test_mes_three(self):
        dep = dependency_matrix(generate_anchors("MES", 3, 6, seed=0).A)
        np.testing.assert_allclose(dep[~np.eye(3, dtype=bool)], -0.5, atol=1e-12)

    def test_duplicate_row(self):
        dep = dependency_matrix([[1.0, 2.0], [1.0, 2.0]])
        assert dep[0, 1] == pytest.approx(1.0, abs=1e-15)

    def test_zero_row_marked(self):
        dep = dependency_matrix([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
        assert np.isnan(dep[0, 1]) and np.isnan(dep[1, 2])
        assert dep[1, 1] == 1.0 and dep[0, 2] == 0.0

    def test_symmetric_and_scale_invariant(self):
        R = np.random.default_rng(3).normal(size=(5, 4))
        dep = dependency_matrix(R)
        np.testing.assert_array_equal(dep, dep.T)
        np.testing.assert_array_equal(np.diag(dep), 1.0)
        np.testing.assert_allclose(dependency_matrix(3.5 * R), dep, atol=1e-14)


def upper(values):
    """3x3 symmetric matrix whose strict upper triangle is ``values``."""
    M = np.eye(3)
    M[0, 1], M[0, 2], M[1, 2] = values
    return M + np.triu(M, 1).T


class TestConsistency:
    def test_identical(self):
        M = upper((0.1, -0.4, 0.3))
        assert cross_seed_consistency([M, M, M]).mean == pytest.approx(1.0, abs=1e-12)

    def test_negation(self):
        M = upper((0.1, -0.4, 0.3))
        assert cross_seed_consistency([M, -M]).mean == pytest.approx(-1.0, abs=1e-12)

    def test_hand_pair(self):
        score = cross_seed_consistency([upper((0.1, 0.2, 0.3)), upper((0.2, 0.4, 0.6))])
        assert score.mean == pytest.approx(1.0, abs=1e-12)
        assert list(score.pairs) == [(0, 1)]

    def test_constant_pair_excluded(self):
        A, B = upper((0.1, 0.2, 0.3)), upper((0.5, 0.5, 0.5))
        score = cross_seed_consistency([A, A, B])
        assert math.isnan(score.pairs[(0, 2)]) and math.isnan(score.pairs[(1, 2)])
        assert score.mean == pytest.approx(1.0)

    def test_order_invariant(self):
        rng = np.random.default_rng(4)
        mats = [upper(rng.normal(size=3)) for _ in range(4)]
        a = cross_seed_consistency(mats).mean
        b = cross_seed_consistency(mats[::-1]).mean
        assert a == pytest.approx(b, abs=1e-12)

    def test_needs_two(self):
        with pytest.raises(ValueError):
            cross_seed_consistency([np.eye(3)])


class TestReport:
    def test_fields_and_schema(self):
        F = np.array([[0.0, 0.0], [0.0, 2.0], [4.0, 0.0], [4.0, 2.0], [9.0, 9.0]])
        y = np.array([0, 0, 1, 1, 2])
        rep = build_report(np.array([0, 1, 1, 1, 2]), y, F, [100, 10, 1], 3)
        assert rep.overall_acc == 0.8
        assert (rep.head_acc, rep.body_acc, rep.tail_acc) == (0.5, 1.0, 1.0)
        assert rep.dependency.shape == (3, 3)
        d = rep.to_dict()
        assert set(d) >= {"overall_acc", "per_class_acc", "head_acc", "body_acc", "tail_acc",
                          "compactness", "separability", "dependency", "notes"}
        assert any("single test sample" in n for n in d["notes"])

    def test_nan_serialized_as_null(self):
        F = np.array([[0.0], [1.0], [5.0]])
        rep = build_report(np.array([0, 0, 1]), np.array([0, 0, 1]), F, [10, 1], 2)
        assert rep.to_dict()["body_acc"] is None
