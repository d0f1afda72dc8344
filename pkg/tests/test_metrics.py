import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvscene.geometry import RigidPose, compose, quat_from_rotvec
from mvscene.metrics import (MetricsConfig, accuracy_curve, add_metric, add_s_metric,
                             assign_predictions, detection_rate, f_score, filter_gt_vertices)
from conftest import random_pose


def brute_force_add_s(pose_est, pose_gt, pts):
    est = pose_est.transform(pts)
    gt = pose_gt.transform(pts)
    total = 0.0
    for p in est:
        total += np.sqrt(((gt - p) ** 2).sum(axis=1)).min()
    return total / len(pts)


class TestAdd:
    def test_identical_poses(self, rng):
        p = random_pose(rng)
        pts = rng.normal(0, 0.1, (50, 3))
        assert add_metric(p, p, pts) == 0.0

    def test_pure_translation_exact(self, rng):
        pts = rng.normal(0, 0.1, (64, 3))
        a = RigidPose.identity()
        b = RigidPose(np.array([0, 0, 0, 1.0]), [0.01, 0, 0])
        assert add_metric(a, b, pts) == pytest.approx(0.01, abs=1e-15)

    def test_matches_loop_oracle(self, rng):
        pts = rng.normal(0, 0.1, (40, 3))
        a, b = random_pose(rng), random_pose(rng)
        expect = np.mean([np.linalg.norm(a.transform(p) - b.transform(p)) for p in pts])
        assert add_metric(a, b, pts) == pytest.approx(expect, abs=1e-12)


class TestAddS:
    def test_identical_poses(self, rng):
        p = random_pose(rng)
        pts = rng.normal(0, 0.1, (50, 3))
        assert add_s_metric(p, p, pts) == 0.0

    def test_symmetric_cylinder_rotation_near_zero(self):
        # structured samples of a cylinder surface: angular grid x z levels
        ang = np.linspace(0, 2 * np.pi, 720, endpoint=False)
        levels = np.array([-0.05, 0.0, 0.05])
        ring = np.vstack([np.column_stack([0.03 * np.cos(ang), 0.03 * np.sin(ang),
                                           np.full(ang.size, z)]) for z in levels])
        a = RigidPose.identity()
        b = RigidPose(quat_from_rotvec([0, 0, 1.1]), np.zeros(3))
        max_gap = 0.03 * (2 * np.pi / 720)  # half-step bound, doubled for safety
        assert add_s_metric(a, b, ring) <= max_gap

    def test_matches_brute_force(self, rng):
        for _ in range(5):
            pts = rng.normal(0, 0.1, (200, 3))
            a, b = random_pose(rng), random_pose(rng)
            assert add_s_metric(a, b, pts) == pytest.approx(
                brute_force_add_s(a, b, pts), abs=1e-12)

    def test_add_s_never_exceeds_add(self, rng):
        pts = rng.normal(0, 0.1, (60, 3))
        for _ in range(200):
            a, b = random_pose(rng), random_pose(rng)
            assert add_s_metric(a, b, pts) <= add_metric(a, b, pts) + 1e-12

    def test_invariant_under_common_rigid_transform(self, rng):
        pts = rng.normal(0, 0.1, (80, 3))
        a, b, g = random_pose(rng), random_pose(rng), random_pose(rng)
        assert add_metric(compose(g, a), compose(g, b), pts) == \
            pytest.approx(add_metric(a, b, pts), abs=1e-9)
        assert add_s_metric(compose(g, a), compose(g, b), pts) == \
            pytest.approx(add_s_metric(a, b, pts), abs=1e-9)


class TestAccuracyCurve:
    def test_all_zero_errors(self):
        c = accuracy_curve([0.0, 0.0], 0.1, 11)
        assert np.all(c.accuracies == 1.0)
        assert c.auc == pytest.approx(1.0, abs=1e-12)

    def test_all_missed(self):
        c = accuracy_curve([np.inf, np.inf], 0.1, 11)
        assert c.auc == 0.0

    def test_hand_computed_example(self):
        # errors 1 cm and 3 cm, thresholds 0..4 cm in 5 steps
        c = accuracy_curve([0.01, 0.03], 0.04, 5)
        assert np.allclose(c.accuracies, [0.0, 0.5, 0.5, 1.0, 1.0])
        assert c.auc == pytest.approx(0.625, abs=1e-12)

    def test_monotone_accuracies(self, rng):
        errs = rng.uniform(0, 0.2, 100)
        c = accuracy_curve(errs, 0.1, 33)
        assert np.all(np.diff(c.accuracies) >= 0)

    def test_auc_is_trapezoid_normalized(self, rng):
        errs = rng.uniform(0, 0.2, 50)
        c = accuracy_curve(errs, 0.1, 21)
        expect = np.trapezoid(c.accuracies, c.thresholds) / 0.1
        assert c.auc == pytest.approx(expect, abs=1e-12)

    def test_order_invariance_and_mixture_linearity(self, rng):
        a = rng.uniform(0, 0.1, 30).tolist()
        b = rng.uniform(0, 0.1, 70).tolist()
        auc_mix = accuracy_curve(a + b, 0.08, 17).auc
        auc_perm = accuracy_curve(b + a, 0.08, 17).auc
        assert auc_mix == pytest.approx(auc_perm, abs=1e-15)
        expect = 0.3 * accuracy_curve(a, 0.08, 17).auc + 0.7 * accuracy_curve(b, 0.08, 17).auc
        assert auc_mix == pytest.approx(expect, abs=1e-12)


@given(st.lists(st.floats(min_value=0, max_value=10, allow_nan=False), min_size=1,
                max_size=50))
@settings(max_examples=200, deadline=None)
def test_auc_always_in_unit_interval(errors):
    c = accuracy_curve(errors, 0.05, 13)
    assert 0.0 <= c.auc <= 1.0 + 1e-12


class TestFilterGt:
    def test_cloud_equals_vertices(self, rng):
        v = rng.normal(0, 0.1, (30, 3))
        assert filter_gt_vertices(v, v, 0.01).shape == (30, 3)

    def test_empty_cloud_keeps_none(self, rng):
        v = rng.normal(0, 0.1, (30, 3))
        assert filter_gt_vertices(v, np.empty((0, 3)), 0.01).shape == (0, 3)

    def test_half_visible(self, rng):
        v = np.column_stack([np.linspace(-0.1, 0.1, 100), np.zeros(100), np.zeros(100)])
        cloud = v[v[:, 0] > 0]
        kept = filter_gt_vertices(v, cloud, epsilon=0.001)
        assert 45 <= kept.shape[0] <= 55


class TestAssign:
    def test_one_to_one(self):
        res = assign_predictions([[0, 0, 0], [1, 0, 0]], [[0, 0, 0], [1, 0, 0]])
        assert res.matches == ((0, 0), (1, 1))
        assert res.false_positives == () and res.false_negatives == ()

    def test_duplicates_become_false_positives(self):
        res = assign_predictions([[0, 0, 0], [0.01, 0, 0]], [[0, 0, 0]])
        assert len(res.matches) == 1 and res.matches[0] == (0, 0)
        assert res.false_positives == (1,)

    def test_unmatched_gt_is_false_negative(self):
        res = assign_predictions(np.empty((0, 3)), [[0, 0, 0], [1, 0, 0]])
        assert res.false_negatives == (0, 1)

    def test_explicit_metric_overrides_centroid_ranking(self):
        res = assign_predictions([[0, 0, 0], [0.01, 0, 0]], [[0, 0, 0]],
                                 distances=[5.0, 1.0])
        assert res.matches == ((1, 0),)
        assert res.false_positives == (0,)


class TestFScore:
    def test_identical_clouds(self, rng):
        pts = rng.normal(0, 0.1, (100, 3))
        assert f_score(pts, pts, 0.001) == (1.0, 1.0, 1.0)

    def test_half_subset(self, rng):
        gt = rng.normal(0, 0.1, (100, 3))
        rec = gt[:50]
        p, r, f = f_score(rec, gt, 1e-9)
        assert (p, r) == (1.0, 0.5)
        assert f == pytest.approx(2.0 / 3.0, abs=1e-15)

    def test_swap_symmetry(self, rng):
        a = rng.normal(0, 0.1, (80, 3))
        b = rng.normal(0, 0.1, (60, 3))
        p1, r1, f1 = f_score(a, b, 0.05)
        p2, r2, f2 = f_score(b, a, 0.05)
        assert (p1, r1) == (r2, p2)
        assert f1 == pytest.approx(f2, abs=1e-15)

    def test_reference_threshold_presets(self):
        assert MetricsConfig().fscore_presets == (0.025, 0.035, 0.025)


class TestDetectionRate:
    def test_perfect_coverage(self, rng):
        gts = [rng.normal(0, 0.05, (50, 3)) for _ in range(4)]
        assert detection_rate([g.copy() for g in gts], gts) == 1.0

    def test_none_detected(self, rng):
        gts = [rng.normal(0, 0.05, (50, 3)) for _ in range(4)]
        assert detection_rate([], gts) == 0.0

    def test_partial_detection(self, rng):
        gts = [rng.normal(i, 0.02, (40, 3)) for i in range(10)]
        outputs = [g + rng.normal(0, 0.001, g.shape) for g in gts[:8]]
        assert detection_rate(outputs, gts) == pytest.approx(0.8)

    def test_coverage_fraction_rule(self, rng):
        gt = np.column_stack([np.linspace(0, 1, 100), np.zeros(100), np.zeros(100)])
        covering = gt[:49]  # 49% coverage only
        assert detection_rate([covering], [gt], coverage_fraction=0.5,
                              tolerance=1e-6) == 0.0
        covering = gt[:51]
        assert detection_rate([covering], [gt], coverage_fraction=0.5,
                              tolerance=1e-6) == 1.0
