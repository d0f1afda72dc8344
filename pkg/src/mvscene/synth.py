"""Deterministic synthetic tabletop scenes for testing and validation.

Generates ground-truth object layouts, a camera arc mimicking a
wrist-mounted scan, noisy keypoint detections with accuracy-correlated
confidences, labeled surface point clouds, and per-view instance masks.
Everything is bit-reproducible from (config, seed) and uses the same data
types the pipeline consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .depthmap import Plane, PointCloud, splat_cloud
from .errors import PlacementFailure
from .fusion import ViewDetection
from .geometry import (Camera, CameraIntrinsics, ObjectModel, RigidPose, invert,
                       project_points, quat_from_matrix, quat_from_rotvec)
from .primitives import PrimitiveShape, sample_primitive_surface


@dataclass
class SceneConfig:
    n_objects_min: int = 5
    n_objects_max: int = 20
    cylinder_fraction: float = 0.4
    table_half_extent: float = 0.5
    table_z: float = 0.0
    workspace_radius: float = 0.35
    cuboid_size_min: float = 0.04
    cuboid_size_max: float = 0.12
    cylinder_radius_min: float = 0.02
    cylinder_radius_max: float = 0.05
    cylinder_height_min: float = 0.06
    cylinder_height_max: float = 0.15
    placement_margin: float = 0.01
    max_attempts: int = 200
    n_cameras: int = 8
    camera_radius: float = 0.8
    camera_height: float = 0.6
    camera_arc_degrees: float = 120.0
    image_width: int = 640
    image_height: int = 480
    focal_px: float = 600.0
    mesh_sample_density: float = 40000.0  # object-frame vertices per m^2


@dataclass
class DetectionNoise:
    pixel_sigma: float = 0.0
    dropout_prob: float = 0.0
    confidence_tau: float = 2.0
    adversarial: bool = False  # confidences uncorrelated with accuracy


@dataclass(eq=False)
class PlacedObject:
    model: ObjectModel
    pose: RigidPose


@dataclass(eq=False)
class SyntheticScene:
    plane: Plane
    objects: list
    primitives: list
    cameras: list
    rng_seed: int
    config: SceneConfig = field(default_factory=SceneConfig)


# ---------------------------------------------------------------------------
# scene construction
# ---------------------------------------------------------------------------

def _cuboid_keypoints(extents):
    ex, ey, ez = np.asarray(extents) / 2.0
    corners = np.array([[sx * ex, sy * ey, sz * ez]
                        for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    return np.vstack([corners, np.zeros(3)])


def _cylinder_keypoints(radius, height):
    h = height / 2.0
    rim = []
    for z in (h, -h):
        for ang in (0.0, np.pi / 2, np.pi, 3 * np.pi / 2):
            rim.append([radius * np.cos(ang), radius * np.sin(ang), z])
    return np.vstack([np.asarray(rim), np.zeros(3)])


def _look_at(eye, target) -> RigidPose:
    """World-from-camera pose looking from eye to target, image y downward."""
    z = np.asarray(target, dtype=np.float64) - np.asarray(eye, dtype=np.float64)
    z = z / np.linalg.norm(z)
    ref = np.array([0.0, 0.0, -1.0])
    if abs(z @ ref) > 0.999:
        ref = np.array([0.0, 1.0, 0.0])
    x = np.cross(ref, z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.column_stack([x, y, z])
    return RigidPose(quat_from_matrix(R), eye)


def _xy_halfwidths(kind, params, yaw):
    c, s = abs(np.cos(yaw)), abs(np.sin(yaw))
    if kind == "cuboid":
        ex, ey, _ = params
        return np.array([c * ex / 2 + s * ey / 2, s * ex / 2 + c * ey / 2])
    r = params[0]
    return np.array([r, r])


def generate_scene(config: SceneConfig | None = None, seed: int = 0) -> SyntheticScene:
    """Deterministically generate a tabletop scene.

    Objects are upright primitives resting on the table, rejection-sampled
    so their horizontal AABBs stay disjoint; cameras sit on an arc looking
    at the workspace center.

    Raises:
        PlacementFailure: rejection sampling exhausted ``max_attempts``.
    """
    cfg = config if config is not None else SceneConfig()
    rng = np.random.default_rng(seed)
    n_objects = int(rng.integers(cfg.n_objects_min, cfg.n_objects_max + 1))

    objects, primitives = [], []
    placed = []  # (center_xy, halfwidths)
    for i in range(n_objects):
        is_cyl = rng.uniform() < cfg.cylinder_fraction
        if is_cyl:
            radius = rng.uniform(cfg.cylinder_radius_min, cfg.cylinder_radius_max)
            height = rng.uniform(cfg.cylinder_height_min, cfg.cylinder_height_max)
            params = (radius, height)
            z_half = height / 2.0
        else:
            extents = rng.uniform(cfg.cuboid_size_min, cfg.cuboid_size_max, 3)
            params = tuple(extents)
            z_half = extents[2] / 2.0

        pose = None
        for _ in range(cfg.max_attempts):
            yaw = rng.uniform(0.0, 2 * np.pi)
            xy = rng.uniform(-cfg.workspace_radius, cfg.workspace_radius, 2)
            if np.linalg.norm(xy) > cfg.workspace_radius:
                continue
            hw = _xy_halfwidths("cylinder" if is_cyl else "cuboid", params, yaw)
            ok = True
            for (oxy, ohw) in placed:
                if np.all(np.abs(xy - oxy) <= hw + ohw + cfg.placement_margin):
                    ok = False
                    break
            if ok:
                placed.append((xy, hw))
                pose = RigidPose(quat_from_rotvec([0.0, 0.0, yaw]),
                                 [xy[0], xy[1], cfg.table_z + z_half])
                break
        if pose is None:
            raise PlacementFailure(f"could not place object {i} in {cfg.max_attempts} attempts")

        if is_cyl:
            radius, height = params
            prim = PrimitiveShape("cylinder", pose, radius=radius, height=height)
            keypoints = _cylinder_keypoints(radius, height)
            kind = "cylinder"
        else:
            prim = PrimitiveShape("cuboid", pose, extents=np.asarray(params))
            keypoints = _cuboid_keypoints(params)
            kind = "cuboid"
        local = PrimitiveShape(kind, RigidPose.identity(),
                               extents=prim.extents, radius=prim.radius, height=prim.height)
        mesh = sample_primitive_surface(local, cfg.mesh_sample_density,
                                        np.random.default_rng(seed * 10007 + i))
        model = ObjectModel(f"{kind}_{i:02d}", keypoints, mesh, symmetric=is_cyl)
        objects.append(PlacedObject(model, pose))
        primitives.append(prim)

    target = np.array([0.0, 0.0, cfg.table_z])
    arc = np.deg2rad(cfg.camera_arc_degrees)
    if cfg.n_cameras == 1:
        angles = np.array([0.0])
    else:
        angles = np.linspace(-arc / 2, arc / 2, cfg.n_cameras)
    K = CameraIntrinsics(cfg.focal_px, cfg.focal_px, cfg.image_width / 2.0,
                         cfg.image_height / 2.0, cfg.image_width, cfg.image_height)
    cameras = []
    for ang in angles:
        eye = np.array([cfg.camera_radius * np.cos(ang), cfg.camera_radius * np.sin(ang),
                        cfg.table_z + cfg.camera_height])
        cameras.append(Camera(_look_at(eye, target), K))

    centroid = (np.mean([o.pose.translation for o in objects], axis=0)
                if objects else target)
    for cam in cameras:
        uv, ok = project_points(invert(cam.pose), cam.intrinsics, centroid[None, :])
        if not (ok[0] and 0 <= uv[0, 0] < K.width and 0 <= uv[0, 1] < K.height):
            raise PlacementFailure("scene centroid does not project into every camera")

    plane = Plane(np.array([0.0, 0.0, 1.0]), -cfg.table_z)
    return SyntheticScene(plane, objects, primitives, cameras, seed, cfg)


# ---------------------------------------------------------------------------
# detections
# ---------------------------------------------------------------------------

def render_detections(scene: SyntheticScene, noise: DetectionNoise | None = None,
                      seed: int = 0):
    """Project every object's keypoints into every camera with optional
    Gaussian pixel noise, dropout, and accuracy-correlated confidences."""
    noise = noise if noise is not None else DetectionNoise()
    rng = np.random.default_rng(seed)
    detections = []
    for view_id, cam in enumerate(scene.cameras):
        w2c = invert(cam.pose)
        K = cam.intrinsics
        for obj in scene.objects:
            world = obj.pose.transform(obj.model.keypoints)
            uv, ok = project_points(w2c, K, world)
            inside = ok & (uv[:, 0] >= 0) & (uv[:, 0] < K.width) \
                        & (uv[:, 1] >= 0) & (uv[:, 1] < K.height)
            n = uv.shape[0]
            dropped = rng.uniform(size=n) < noise.dropout_prob
            offsets = rng.normal(0.0, noise.pixel_sigma, size=(n, 2)) \
                if noise.pixel_sigma > 0 else np.zeros((n, 2))
            adv = rng.uniform(0.3, 1.0, size=n)

            visible = inside & ~dropped
            if not visible.any():
                continue
            pixels = np.where(visible[:, None], uv + offsets, np.nan)
            if noise.adversarial:
                conf = np.where(visible, adv, 0.0)
            else:
                mag = np.linalg.norm(offsets, axis=1)
                conf = np.where(visible, np.exp(-mag / noise.confidence_tau), 0.0)
            detections.append(ViewDetection(view_id, obj.model.class_id, pixels, conf,
                                            cam.pose, K))
    return detections


# ---------------------------------------------------------------------------
# point clouds and masks
# ---------------------------------------------------------------------------

_PALETTE = np.array([
    [230, 25, 75], [60, 180, 75], [255, 225, 25], [0, 130, 200], [245, 130, 48],
    [145, 30, 180], [70, 240, 240], [240, 50, 230], [210, 245, 60], [250, 190, 190],
    [0, 128, 128], [170, 110, 40], [128, 0, 0], [0, 0, 128], [128, 128, 0],
    [255, 215, 180], [170, 255, 195], [128, 128, 128], [255, 250, 200], [230, 190, 255],
], dtype=np.uint8)


def sample_labeled_cloud(scene: SyntheticScene, density: float = 200_000.0,
                         noise_sigma: float = 0.0, visibility: bool = False,
                         seed: int = 0):
    """Surface-sample every primitive and the table.

    Returns:
        (PointCloud, labels): labels give the owning object index, -1 for
        table points. Noise displaces points along the local surface
        normal; visibility keeps only points seen by at least one camera.
    """
    cfg = scene.config
    ss = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(entropy=(seed, 73))
    streams = ss.spawn(len(scene.primitives) + 2)
    pts_parts, nrm_parts, label_parts = [], [], []
    for i, prim in enumerate(scene.primitives):
        pts, nrm = sample_primitive_surface(prim, density, streams[i], return_normals=True)
        pts_parts.append(pts)
        nrm_parts.append(nrm)
        label_parts.append(np.full(pts.shape[0], i, dtype=np.int64))

    table_rng = np.random.default_rng(streams[-2])
    area = (2 * cfg.table_half_extent) ** 2
    count = int(round(area * density))
    txy = table_rng.uniform(-cfg.table_half_extent, cfg.table_half_extent, size=(count, 2))
    tpts = np.column_stack([txy, np.full(count, cfg.table_z)])
    pts_parts.append(tpts)
    nrm_parts.append(np.tile(np.array([0.0, 0.0, 1.0]), (count, 1)))
    label_parts.append(np.full(count, -1, dtype=np.int64))

    points = np.vstack(pts_parts)
    normals = np.vstack(nrm_parts)
    labels = np.concatenate(label_parts)

    if noise_sigma > 0:
        noise_rng = np.random.default_rng(streams[-1])
        points = points + normals * noise_rng.normal(0.0, noise_sigma, size=points.shape[0])[:, None]

    if visibility:
        seen = np.zeros(points.shape[0], dtype=bool)
        for cam in scene.cameras:
            dm, winner = splat_cloud(points, cam.pose, cam.intrinsics, 1.0)
            w2c = invert(cam.pose)
            z = w2c.transform(points)[:, 2]
            uv, ok = project_points(w2c, cam.intrinsics, points)
            xs = np.floor(uv[:, 0] + 0.5).astype(np.int64)
            ys = np.floor(uv[:, 1] + 0.5).astype(np.int64)
            inb = ok & (xs >= 0) & (xs < cam.intrinsics.width) & (ys >= 0) & (ys < cam.intrinsics.height)
            idx = np.where(inb)[0]
            front = dm.depth[ys[idx], xs[idx]] >= z[idx] - 0.01
            seen[idx[front]] = True
        points, normals, labels = points[seen], normals[seen], labels[seen]

    colors = np.where(labels[:, None] >= 0,
                      _PALETTE[labels % len(_PALETTE)],
                      np.full((1, 3), 100, dtype=np.uint8)).astype(np.uint8)
    return PointCloud(points, colors), labels


def sample_surface_cloud(scene: SyntheticScene, density: float = 200_000.0,
                         noise_sigma: float = 0.0, visibility: bool = False,
                         seed: int = 0) -> PointCloud:
    cloud, _ = sample_labeled_cloud(scene, density, noise_sigma, visibility, seed)
    return cloud


def render_instance_masks(scene: SyntheticScene, cloud: PointCloud, labels,
                          splat_radius_px: float = 1.0):
    """Per-view uint16 label rasters (0 background/table, i+1 = object i)
    rendered by z-buffered splatting of the labeled cloud."""
    labels = np.asarray(labels, dtype=np.int64)
    masks = []
    for cam in scene.cameras:
        _, winner = splat_cloud(cloud.points, cam.pose, cam.intrinsics, splat_radius_px)
        raster = np.zeros(winner.shape, dtype=np.uint16)
        hit = winner >= 0
        lab = labels[winner[hit]]
        raster[hit] = np.where(lab >= 0, lab + 1, 0).astype(np.uint16)
        masks.append(raster)
    return masks
