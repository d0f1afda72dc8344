import numpy as np
import pytest

from mvscene.depthmap import DepthMap, Plane, plane_fill_depth
from mvscene.errors import EmptyUnprojection, FitRejected
from mvscene.geometry import RigidPose, matrix_from_quat, quat_from_rotvec
from mvscene.primitives import (CLASS_ORDER, PrimitiveShape,
                                SegmentationInstance, dbscan, fit_cuboid_ransac,
                                fit_cylinder_ransac, majority_vote_baseline, multiview_vote,
                                nms_by_size, sample_primitive_surface, sequential_aggregate,
                                unproject_instance, voxel_iou)
from test_depth import K, overhead_camera


def naive_dbscan(points, eps, min_pts):
    """Reference O(n^2) DBSCAN with classic queue expansion."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    nb = [np.where(d2[i] <= eps * eps)[0].tolist() for i in range(n)]
    labels = np.full(n, -2, dtype=np.int64)
    cid = 0
    for i in range(n):
        if labels[i] != -2:
            continue
        if len(nb[i]) < min_pts:
            labels[i] = -1
            continue
        labels[i] = cid
        queue = list(nb[i])
        k = 0
        while k < len(queue):
            j = queue[k]
            k += 1
            if labels[j] == -1:
                labels[j] = cid
            if labels[j] != -2:
                continue
            labels[j] = cid
            if len(nb[j]) >= min_pts:
                queue.extend(nb[j])
        cid += 1
    return labels


def make_instance(points, view=0, cls="cuboid", conf=1.0):
    return SegmentationInstance(view, cls, points=np.asarray(points, dtype=np.float64),
                                confidence=conf)


def blob(rng, center, n=200, sigma=0.002):
    return rng.normal(0, sigma, (n, 3)) + center


class TestUnproject:
    def test_plane_mask_lands_on_plane(self):
        cam = overhead_camera(1.0)
        plane = Plane([0.0, 0.0, 1.0], 0.0)
        dm = plane_fill_depth(plane, cam, K)
        mask = np.ones((K.height, K.width), dtype=bool)
        inst = SegmentationInstance(0, "cuboid", mask=mask)
        pts = unproject_instance(inst, dm, cam, K)
        assert np.all(np.abs(pts[:, 2]) < 1e-9)

    def test_invalid_only_mask_raises(self):
        dm = DepthMap(K.width, K.height, np.full((K.height, K.width), np.inf),
                      np.zeros((K.height, K.width), dtype=bool))
        inst = SegmentationInstance(0, "cuboid",
                                    mask=np.ones((K.height, K.width), dtype=bool))
        with pytest.raises(EmptyUnprojection):
            unproject_instance(inst, dm, overhead_camera(), K)

    def test_round_trip_with_renderer(self, rng):
        from mvscene.depthmap import PointCloud, render_virtual_depth
        pts = np.column_stack([rng.uniform(-0.2, 0.2, (3000, 2)),
                               rng.uniform(0, 0.05, 3000)])
        cam = overhead_camera(1.0)
        radius = 1.0
        dm = render_virtual_depth(PointCloud(pts), cam, K, radius)
        inst = SegmentationInstance(0, "cuboid", mask=dm.valid.copy())
        rec = unproject_instance(inst, dm, cam, K)
        from scipy.spatial import cKDTree
        d, _ = cKDTree(pts).query(rec)
        assert d.max() <= 2.0 * radius * dm.depth[dm.valid].max() / K.fx + 1e-9


class TestSequentialAggregate:
    def test_same_object_three_views_merge(self, rng):
        pts = blob(rng, [0, 0, 0.05], 300)
        insts = [make_instance(pts + rng.normal(0, 1e-4, pts.shape), view=v)
                 for v in range(3)]
        sets = sequential_aggregate(insts)
        assert len(sets) == 1
        assert len(sets[0].view_ids) == 3

    def test_disjoint_objects_stay_apart(self, rng):
        a = blob(rng, [0, 0, 0.05])
        b = blob(rng, [0.5, 0, 0.05])
        sets = sequential_aggregate([make_instance(a, 0), make_instance(b, 0)])
        assert len(sets) == 2

    def test_chain_merges_transitively(self, rng):
        # A overlaps B, B overlaps C, A and C barely overlap
        a = blob(rng, [0.000, 0, 0], 800, sigma=0.01)
        b = blob(rng, [0.015, 0, 0], 800, sigma=0.01)
        c = blob(rng, [0.030, 0, 0], 800, sigma=0.01)
        assert voxel_iou(a, c, 0.01) < 0.3 <= voxel_iou(a, b, 0.01)
        sets = sequential_aggregate([make_instance(a, 0), make_instance(b, 1),
                                     make_instance(c, 2)])
        assert len(sets) == 1

    def test_vote_weighted_majority_label(self, rng):
        pts = blob(rng, [0, 0, 0])
        s = sequential_aggregate([
            make_instance(pts, 0, "cuboid", conf=0.4),
            make_instance(pts, 1, "cylinder", conf=0.9),
            make_instance(pts, 2, "cuboid", conf=0.4),
        ])
        assert len(s) == 1
        assert s[0].label == "cylinder"  # one 0.9 vote beats two 0.4 votes
        assert s[0].votes == {"cuboid": pytest.approx(0.8), "cylinder": pytest.approx(0.9)}


class TestDbscan:
    def test_two_blobs(self, rng):
        pts = np.vstack([blob(rng, [0, 0, 0], 100), blob(rng, [0.1, 0, 0], 100)])
        labels = dbscan(pts, eps=0.01, min_pts=5)
        assert set(labels) == {0, 1}
        assert np.all(labels[:100] == labels[0])
        assert np.all(labels[100:] == labels[100])

    def test_sparse_points_all_noise(self):
        pts = np.arange(20)[:, None] * [0.05, 0, 0]
        labels = dbscan(pts, eps=0.01, min_pts=2)
        assert np.all(labels == -1)

    def test_matches_naive_reference(self):
        for seed in range(8):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(50, 500))
            pts = np.vstack([
                blob(rng, rng.uniform(-0.1, 0.1, 3), n // 2, sigma=0.004),
                rng.uniform(-0.1, 0.1, (n - n // 2, 3)),
            ])
            eps = float(rng.uniform(0.005, 0.02))
            min_pts = int(rng.integers(2, 10))
            assert np.array_equal(dbscan(pts, eps, min_pts),
                                  naive_dbscan(pts, eps, min_pts))

    def test_rigid_motion_invariance(self, rng):
        pts = np.vstack([blob(rng, [0, 0, 0], 150), rng.uniform(-0.1, 0.1, (50, 3))])
        R = matrix_from_quat(quat_from_rotvec([0.4, -0.2, 0.7]))
        moved = pts @ R.T + [1.0, -2.0, 0.5]
        assert np.array_equal(dbscan(pts, 0.01, 5), dbscan(moved, 0.01, 5))


class TestNms:
    def test_duplicate_keeps_larger(self, rng):
        big = make_instance(blob(rng, [0, 0, 0], 300))
        small = make_instance(big.points[:150])
        kept = nms_by_size([small, big], overlap_threshold=0.5)
        assert kept == [big]

    def test_disjoint_all_kept(self, rng):
        a = make_instance(blob(rng, [0, 0, 0]))
        b = make_instance(blob(rng, [1, 0, 0]))
        assert nms_by_size([a, b]) == [a, b]

    def test_nested_removed(self, rng):
        big = make_instance(blob(rng, [0, 0, 0], 500, sigma=0.01))
        small = make_instance(big.points[:300])
        assert voxel_iou(big.points, small.points, 0.01) > 0.5
        kept = nms_by_size([small, big], overlap_threshold=0.5)
        assert kept == [big]

    def test_output_subset_and_threshold_property(self, rng):
        insts = [make_instance(blob(rng, rng.uniform(-0.05, 0.05, 3),
                                    int(rng.integers(50, 300)), sigma=0.008))
                 for _ in range(8)]
        kept = nms_by_size(insts, overlap_threshold=0.4)
        assert all(k in insts for k in kept)
        for i, a in enumerate(kept):
            for b in kept[i + 1:]:
                assert voxel_iou(a.points, b.points, 0.01) < 0.4


class TestMultiviewVote:
    def test_single_view_reduces_to_denoised_instances(self, rng):
        a = blob(rng, [0, 0, 0], 300)
        b = blob(rng, [0.5, 0, 0], 300)
        sets = multiview_vote([make_instance(a, 0, "cuboid"),
                               make_instance(b, 0, "cylinder")])
        assert len(sets) == 2
        assert {s.label for s in sets} == {"cuboid", "cylinder"}

    def test_idempotent_under_view_duplication(self, rng):
        views = [[make_instance(blob(np.random.default_rng(v * 7 + k), [0.4 * k, 0, 0], 300),
                                view=v, cls="cuboid") for k in range(2)]
                 for v in range(3)]
        flat = [i for vi in views for i in vi]
        base = multiview_vote(flat)
        dup = [SegmentationInstance(3, i.shape_class, points=i.points.copy())
               for i in views[-1]]
        again = multiview_vote(flat + dup)
        assert len(base) == len(again)
        for s1, s2 in zip(base, again):
            assert np.array_equal(np.unique(s1.points, axis=0),
                                  np.unique(s2.points, axis=0))


class TestBaseline:
    def test_single_view_identity(self, rng):
        pts = blob(rng, [0, 0, 0], 100)
        grid = majority_vote_baseline([make_instance(pts, 0, "cylinder")], 0.01)
        assert set(np.unique(grid.labels)) <= {-1, CLASS_ORDER.index("cylinder")}
        assert (grid.labels == 1).any()

    def test_two_views_agreeing(self, rng):
        pts = blob(rng, [0, 0, 0], 100)
        one = majority_vote_baseline([make_instance(pts, 0, "cuboid")], 0.01)
        two = majority_vote_baseline([make_instance(pts, 0, "cuboid"),
                                      make_instance(pts, 1, "cuboid")], 0.01)
        assert np.array_equal(one.labels, two.labels)

    def test_majority_two_versus_one(self, rng):
        pts = blob(rng, [0, 0, 0], 100)
        grid = majority_vote_baseline([
            make_instance(pts, 0, "cylinder"), make_instance(pts, 1, "cylinder"),
            make_instance(pts, 2, "cuboid")], 0.01)
        occupied = grid.labels >= 0
        assert np.all(grid.labels[occupied] == CLASS_ORDER.index("cylinder"))

    def test_tie_goes_to_lower_class_index(self, rng):
        pts = blob(rng, [0, 0, 0], 100)
        grid = majority_vote_baseline([make_instance(pts, 0, "cylinder"),
                                       make_instance(pts, 1, "cuboid")], 0.01)
        occupied = grid.labels >= 0
        assert np.all(grid.labels[occupied] == CLASS_ORDER.index("cuboid"))


class TestCylinderFit:
    def _cylinder(self, radius=0.03, height=0.10, rotvec=(0.2, -0.1, 0.4)):
        pose = RigidPose(quat_from_rotvec(rotvec), [0.02, -0.01, 0.05])
        return PrimitiveShape("cylinder", pose, radius=radius, height=height)

    def test_exact_data(self):
        shape = self._cylinder()
        pts = sample_primitive_surface(shape, 400_000, np.random.default_rng(0))
        fit = fit_cylinder_ransac(pts, rng_seed=0)
        assert abs(fit.radius - 0.03) < 1e-6
        axis_gt = matrix_from_quat(shape.pose.quaternion)[:, 2]
        axis = matrix_from_quat(fit.pose.quaternion)[:, 2]
        assert np.arccos(min(abs(axis @ axis_gt), 1.0)) < 1e-6
        assert fit.fit_rms < 1e-9
        assert fit.inlier_count > 0

    def test_noisy_data(self):
        ok = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            shape = self._cylinder(rotvec=tuple(rng.normal(0, 0.4, 3)))
            pts, nrm = sample_primitive_surface(shape, 250_000, rng, return_normals=True)
            pts = pts + nrm * rng.normal(0, 0.001, len(pts))[:, None]
            try:
                fit = fit_cylinder_ransac(pts, rng_seed=seed)
            except FitRejected:
                continue
            axis_gt = matrix_from_quat(shape.pose.quaternion)[:, 2]
            axis = matrix_from_quat(fit.pose.quaternion)[:, 2]
            if abs(fit.radius - 0.03) / 0.03 < 0.02 and \
                    np.degrees(np.arccos(min(abs(axis @ axis_gt), 1.0))) < 2.0:
                ok += 1
        assert ok >= 19

    def test_planar_points_rejected(self, rng):
        pts = np.column_stack([rng.uniform(-0.1, 0.1, (3000, 2)), np.zeros(3000)])
        with pytest.raises(FitRejected):
            fit_cylinder_ransac(pts, rng_seed=0)

    def test_inliers_satisfy_distance_predicate(self):
        from mvscene.primitives import PrimitiveConfig, _cylinder_surface_distance
        shape = self._cylinder()
        rng = np.random.default_rng(1)
        pts, nrm = sample_primitive_surface(shape, 250_000, rng, return_normals=True)
        pts = pts + nrm * rng.normal(0, 0.001, len(pts))[:, None]
        cfg = PrimitiveConfig()
        fit = fit_cylinder_ransac(pts, cfg, rng_seed=1)
        axis = matrix_from_quat(fit.pose.quaternion)[:, 2]
        d = np.abs(_cylinder_surface_distance(pts, fit.pose.translation, axis,
                                              fit.radius, fit.height))
        assert int((d <= cfg.cylinder_tol).sum()) == fit.inlier_count


class TestCuboidFit:
    def test_exact_data(self):
        pose = RigidPose(quat_from_rotvec([0.1, 0.2, 0.6]), [0.05, -0.02, 0.1])
        shape = PrimitiveShape("cuboid", pose, extents=[0.10, 0.06, 0.04])
        pts = sample_primitive_surface(shape, 300_000, np.random.default_rng(0))
        fit = fit_cuboid_ransac(pts, rng_seed=0)
        assert np.all(np.abs(np.sort(fit.extents) - [0.04, 0.06, 0.10]) < 0.001)

    def test_three_face_partial_box(self):
        ok = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            pose = RigidPose(quat_from_rotvec(rng.normal(0, 0.4, 3)), [0.0, 0.0, 0.1])
            local = PrimitiveShape("cuboid", RigidPose.identity(),
                                   extents=[0.10, 0.06, 0.04])
            lp, ln = sample_primitive_surface(local, 400_000, rng, return_normals=True)
            visible = (ln @ [1, 0, 0] > 0.5) | (ln @ [0, 1, 0] > 0.5) | (ln @ [0, 0, 1] > 0.5)
            pts = pose.transform(lp[visible])
            pts = pts + rng.normal(0, 0.001, pts.shape)
            try:
                fit = fit_cuboid_ransac(pts, rng_seed=seed)
            except FitRejected:
                continue
            ext_ok = np.all(np.abs(np.sort(fit.extents) - [0.04, 0.06, 0.10])
                            / [0.04, 0.06, 0.10] < 0.05)
            Rf = matrix_from_quat(fit.pose.quaternion)
            Rg = matrix_from_quat(pose.quaternion)
            of, og = np.argsort(fit.extents), np.argsort([0.10, 0.06, 0.04])
            ang = max(np.degrees(np.arccos(min(abs(Rf[:, a] @ Rg[:, b]), 1.0)))
                      for a, b in zip(of, og))
            if ext_ok and ang < 3.0:
                ok += 1
        assert ok >= 18

    def test_sphere_rejected_or_flagged(self, rng):
        dirs = rng.normal(0, 1, (4000, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = dirs * 0.05
        try:
            fit = fit_cuboid_ransac(pts, rng_seed=0)
        except FitRejected:
            return
        assert fit.fit_rms > 0.002  # poor fit must be visible in the statistics
