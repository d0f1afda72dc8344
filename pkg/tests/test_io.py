import numpy as np
import pytest

from mvscene import fileio
from mvscene.config import PipelineConfig, default_config_text, load_pipeline_config
from mvscene.depthmap import DepthMap, PointCloud
from mvscene.errors import ConfigError, ParseError
from mvscene.geometry import RigidPose, quat_from_rotvec
from mvscene.synth import SceneConfig, generate_scene


class TestPly:
    def test_ascii_three_points(self, tmp_path):
        p = tmp_path / "tiny.ply"
        cloud = PointCloud([[0, 0, 0], [1.5, -2.25, 3.0], [0.1, 0.2, 0.3]])
        fileio.save_ply(p, cloud, binary=False)
        back = fileio.load_ply(p)
        assert np.array_equal(back.points, cloud.points)
        assert back.colors is None

    def test_binary_ascii_round_trip_equality(self, tmp_path, rng):
        pts = rng.normal(0, 1, (200, 3))
        colors = rng.integers(0, 256, (200, 3)).astype(np.uint8)
        cloud = PointCloud(pts, colors)
        fileio.save_ply(tmp_path / "a.ply", cloud, binary=False)
        fileio.save_ply(tmp_path / "b.ply", cloud, binary=True)
        a = fileio.load_ply(tmp_path / "a.ply")
        b = fileio.load_ply(tmp_path / "b.ply")
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.colors, b.colors)
        assert np.array_equal(a.points, pts)

    def test_save_load_bit_identical_files(self, tmp_path, rng):
        cloud = PointCloud(rng.normal(0, 1, (50, 3)))
        fileio.save_ply(tmp_path / "x.ply", cloud, binary=True)
        fileio.save_ply(tmp_path / "y.ply", fileio.load_ply(tmp_path / "x.ply"), binary=True)
        assert (tmp_path / "x.ply").read_bytes() == (tmp_path / "y.ply").read_bytes()

    def test_truncated_binary_raises(self, tmp_path, rng):
        p = tmp_path / "t.ply"
        fileio.save_ply(p, PointCloud(rng.normal(0, 1, (100, 3))), binary=True)
        blob = p.read_bytes()
        p.write_bytes(blob[:len(blob) - 200])
        with pytest.raises(ParseError, match="truncated"):
            fileio.load_ply(p)

    def test_truncated_ascii_raises(self, tmp_path):
        p = tmp_path / "t.ply"
        p.write_text("ply\nformat ascii 1.0\nelement vertex 5\n"
                     "property double x\nproperty double y\nproperty double z\n"
                     "end_header\n0 0 0\n1 1 1\n")
        with pytest.raises(ParseError, match="truncated"):
            fileio.load_ply(p)

    def test_malformed_header_names_line(self, tmp_path):
        p = tmp_path / "bad.ply"
        p.write_text("ply\nformat ascii 1.0\nelement vertex nope\n"
                     "property double x\nend_header\n")
        with pytest.raises(ParseError, match="line 3"):
            fileio.load_ply(p)

    def test_not_a_ply(self, tmp_path):
        p = tmp_path / "no.ply"
        p.write_text("hello\nend_header\n")
        with pytest.raises(ParseError, match="line 1"):
            fileio.load_ply(p)


class TestPoseJson:
    def test_round_trip_scalar_first_on_disk(self):
        pose = RigidPose(quat_from_rotvec([0.3, -0.5, 0.2]), [1, 2, 3])
        rec = fileio.pose_to_json(pose)
        x, y, z, w = pose.quaternion
        assert rec["quaternion"] == [w, x, y, z]
        back = fileio.pose_from_json(rec, "test")
        assert np.allclose(back.quaternion, pose.quaternion)
        assert np.array_equal(back.translation, pose.translation)

    def test_matrix_rejected(self):
        with pytest.raises(ParseError, match="matrix"):
            fileio.pose_from_json({"matrix": [[1]]}, "test")

    def test_missing_field_named(self):
        with pytest.raises(ParseError, match="'translation'"):
            fileio.pose_from_json({"quaternion": [1, 0, 0, 0]}, "test")


class TestDetectionsJson:
    def _scene_detections(self):
        from mvscene.synth import DetectionNoise, render_detections
        cfg = SceneConfig(n_objects_min=2, n_objects_max=2, n_cameras=2,
                          image_width=320, image_height=240, focal_px=300)
        scene = generate_scene(cfg, seed=0)
        return render_detections(scene, DetectionNoise(pixel_sigma=1.0,
                                                       dropout_prob=0.2), seed=1)

    def test_round_trip(self, tmp_path):
        dets = self._scene_detections()
        p = tmp_path / "d.json"
        fileio.save_detections(p, dets)
        back = fileio.load_detections(p)
        assert len(back) == len(dets)
        for a, b in zip(dets, back):
            assert a.view_id == b.view_id and a.class_id == b.class_id
            assert np.array_equal(a.keypoint_pixels, b.keypoint_pixels, equal_nan=True)
            assert np.array_equal(a.keypoint_confidences, b.keypoint_confidences)
            assert np.allclose(a.camera_pose.matrix(), b.camera_pose.matrix(), atol=1e-15)

    def test_minimal_file(self, tmp_path):
        p = tmp_path / "one.json"
        p.write_text("""{"detections": [{"view_id": 0, "class_id": "box",
            "camera": {"pose": {"quaternion": [1, 0, 0, 0], "translation": [0, 0, 0]},
                       "intrinsics": {"fx": 100, "fy": 100, "cx": 50, "cy": 50,
                                      "width": 100, "height": 100}},
            "keypoints": [{"u": 1, "v": 2, "confidence": 0.5}, null,
                          {"u": 3, "v": 4, "confidence": 0.25},
                          {"u": 5, "v": 6, "confidence": 1.0}]}]}""")
        dets = fileio.load_detections(p)
        assert len(dets) == 1
        d = dets[0]
        assert d.num_visible == 3
        assert d.keypoint_confidences[1] == 0.0
        assert np.isnan(d.keypoint_pixels[1]).all()

    def test_resave_bit_identical(self, tmp_path):
        dets = self._scene_detections()
        fileio.save_detections(tmp_path / "a.json", dets)
        fileio.save_detections(tmp_path / "b.json",
                               fileio.load_detections(tmp_path / "a.json"))
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_schema_violation_names_field(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"detections": [{"view_id": 0, "class_id": "box", '
                     '"keypoints": []}]}')
        with pytest.raises(ParseError, match="'camera'"):
            fileio.load_detections(p)

    def test_keypoint_field_violation(self, tmp_path):
        p = tmp_path / "bad2.json"
        p.write_text("""{"detections": [{"view_id": 0, "class_id": "box",
            "camera": {"pose": {"quaternion": [1, 0, 0, 0], "translation": [0, 0, 0]},
                       "intrinsics": {"fx": 100, "fy": 100, "cx": 50, "cy": 50,
                                      "width": 100, "height": 100}},
            "keypoints": [{"u": 1, "v": 2}]}]}""")
        with pytest.raises(ParseError, match="keypoints\\[0\\].*'confidence'"):
            fileio.load_detections(p)


class TestSceneJson:
    def test_round_trip(self, tmp_path):
        cfg = SceneConfig(n_objects_min=2, n_objects_max=2, n_cameras=3,
                          image_width=320, image_height=240, focal_px=300)
        scene = generate_scene(cfg, seed=0)
        p = tmp_path / "scene.json"
        fileio.save_scene(p, scene)
        back = fileio.load_scene(p)
        assert len(back.objects) == 2 and len(back.cameras) == 3
        assert np.allclose(back.plane.normal, scene.plane.normal)
        for a, b in zip(scene.objects, back.objects):
            assert a.model.class_id == b.model.class_id
            assert np.allclose(a.pose.matrix(), b.pose.matrix(), atol=1e-15)
            assert np.array_equal(a.model.keypoints, b.model.keypoints)
        for a, b in zip(scene.primitives, back.primitives):
            assert a.kind == b.kind

    def test_models_accessor(self, tmp_path):
        cfg = SceneConfig(n_objects_min=2, n_objects_max=2, n_cameras=2,
                          image_width=320, image_height=240, focal_px=300)
        scene = generate_scene(cfg, seed=1)
        p = tmp_path / "scene.json"
        fileio.save_scene(p, scene)
        models = fileio.load_object_models(p)
        assert set(models) == {o.model.class_id for o in scene.objects}


class TestDepthAndMasks:
    def test_npz_round_trip_exact(self, tmp_path, rng):
        depth = rng.uniform(0.5, 2.0, (24, 32))
        valid = rng.uniform(size=(24, 32)) > 0.3
        depth[~valid] = np.inf
        dm = DepthMap(32, 24, depth, valid)
        fileio.save_depth(tmp_path / "d.npz", dm)
        back = fileio.load_depth(tmp_path / "d.npz")
        assert np.array_equal(back.valid, valid)
        assert np.array_equal(back.depth[valid], depth[valid])

    def test_png16_round_trip_millimeter(self, tmp_path, rng):
        depth = rng.uniform(0.5, 2.0, (24, 32))
        valid = rng.uniform(size=(24, 32)) > 0.3
        depth[~valid] = np.inf
        dm = DepthMap(32, 24, depth, valid)
        fileio.save_depth(tmp_path / "d.png", dm)
        back = fileio.load_depth(tmp_path / "d.png")
        assert np.array_equal(back.valid, valid)
        assert np.all(np.abs(back.depth[valid] - depth[valid]) <= 0.0005 + 1e-12)

    def test_masks_round_trip(self, tmp_path, rng):
        masks = [rng.integers(0, 5, (24, 32)).astype(np.uint16) for _ in range(3)]
        fileio.save_masks(tmp_path / "m.npz", masks)
        back = fileio.load_masks(tmp_path / "m.npz")
        assert len(back) == 3
        for a, b in zip(masks, back):
            assert np.array_equal(a, b)


class TestConfig:
    def test_defaults(self):
        cfg = PipelineConfig()
        assert cfg.fusion.stage1_rotation_samples == 20
        assert cfg.depth.min_region == 50
        assert cfg.primitives.dbscan_eps == 0.01

    def test_load_overrides(self, tmp_path):
        p = tmp_path / "cfg.ini"
        p.write_text("[fusion]\nstage1_rotation_samples = 7\n"
                     "[depth]\nband_low = 0.02\n")
        cfg = load_pipeline_config(p)
        assert cfg.fusion.stage1_rotation_samples == 7
        assert cfg.depth.band_low == 0.02
        assert cfg.fusion.stage2_translation_samples == 100  # untouched default

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "cfg.ini"
        p.write_text("[fusion]\nnot_a_key = 1\n")
        with pytest.raises(ConfigError, match="not_a_key"):
            load_pipeline_config(p)

    def test_unknown_section_rejected(self, tmp_path):
        p = tmp_path / "cfg.ini"
        p.write_text("[nonsense]\nx = 1\n")
        with pytest.raises(ConfigError, match="nonsense"):
            load_pipeline_config(p)

    def test_invalid_value_rejected(self, tmp_path):
        p = tmp_path / "cfg.ini"
        p.write_text("[fusion]\nstage1_rotation_sigma = -1\n")
        with pytest.raises(ConfigError):
            load_pipeline_config(p)

    def test_default_text_parses_back(self, tmp_path):
        p = tmp_path / "full.ini"
        p.write_text(default_config_text())
        cfg = load_pipeline_config(p)
        assert cfg.fusion.stage2_translation_sigma == 0.25
        assert cfg.metrics.fscore_presets == (0.025, 0.035, 0.025)
