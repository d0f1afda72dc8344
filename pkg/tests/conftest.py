import numpy as np
import pytest

from mvscene.geometry import RigidPose, quat_from_rotvec
from mvscene.synth import DetectionNoise, SceneConfig, generate_scene, render_detections


def random_pose(rng, t_scale=1.0):
    return RigidPose(quat_from_rotvec(rng.normal(0, 1.0, 3)), rng.normal(0, t_scale, 3))


def box_scene(seed, n_objects=1, n_cameras=8, size_min=0.09, size_max=0.15):
    """Cuboid-only scene with a ~15 cm object about 1 m from the cameras."""
    cfg = SceneConfig(
        n_objects_min=n_objects, n_objects_max=n_objects, cylinder_fraction=0.0,
        cuboid_size_min=size_min, cuboid_size_max=size_max, n_cameras=n_cameras)
    return generate_scene(cfg, seed)


def noisy_detections(scene, pixel_sigma, seed, dropout=0.0):
    return render_detections(
        scene, DetectionNoise(pixel_sigma=pixel_sigma, dropout_prob=dropout), seed)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
