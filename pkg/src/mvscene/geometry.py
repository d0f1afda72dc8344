"""Rigid-body geometry: quaternion poses, pinhole cameras, projection.

Conventions, fixed package-wide:

* Quaternions are scalar-last ``(x, y, z, w)`` and kept unit-norm.
* Translations are meters, angles radians.
* Pixel origin is the top-left corner, x right, y down; pixel centers
  sit on integer coordinates.
* ``project`` takes the pose that maps points *into* the camera frame.
  A :class:`Camera` stores the opposite direction (world-from-camera),
  matching how wrist-mounted camera poses arrive from kinematics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveDepth

_MIN_DEPTH = 1e-6


# ---------------------------------------------------------------------------
# quaternion helpers (scalar-last)
# ---------------------------------------------------------------------------

def quat_identity() -> np.ndarray:
    return np.array([0.0, 0.0, 0.0, 1.0])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n


def quat_mul(a, b) -> np.ndarray:
    """Hamilton product; R(quat_mul(a, b)) == R(a) @ R(b)."""
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ])


def quat_conj(q) -> np.ndarray:
    x, y, z, w = q
    return np.array([-x, -y, -z, w])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector(s) v by unit quaternion q."""
    v = np.asarray(v, dtype=np.float64)
    qv = np.asarray(q[:3], dtype=np.float64)
    w = float(q[3])
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def quat_from_rotvec(r) -> np.ndarray:
    """Unit quaternion for an axis-angle (rotation) vector."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r)
    if theta < 1e-12:
        # second-order Taylor of sin(t/2)/t keeps tiny rotations exact
        s = 0.5 - theta * theta / 48.0
        return quat_normalize(np.array([r[0] * s, r[1] * s, r[2] * s, 1.0 - theta * theta / 8.0]))
    axis = r / theta
    half = 0.5 * theta
    s = np.sin(half)
    return np.array([axis[0] * s, axis[1] * s, axis[2] * s, np.cos(half)])


def rotvec_from_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q[3] < 0.0:
        q = -q
    s = np.linalg.norm(q[:3])
    if s < 1e-12:
        return 2.0 * q[:3]
    theta = 2.0 * np.arctan2(s, q[3])
    return q[:3] * (theta / s)


def matrix_from_quat(q) -> np.ndarray:
    x, y, z, w = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array([
        [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
        [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
        [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
    ])


def quat_from_matrix(R) -> np.ndarray:
    """Shepperd's method, numerically stable for all rotations."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s, 0.25 * s])
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([0.25 * s, (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s])
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([(R[0, 1] + R[1, 0]) / s, 0.25 * s,
                      (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s,
                      0.25 * s, (R[1, 0] - R[0, 1]) / s])
    return quat_normalize(q)


def rotation_geodesic(a, b) -> float:
    """Geodesic angle in [0, pi] between two unit quaternions.

    Respects the double cover: q and -q are the same rotation.
    """
    d = abs(float(np.dot(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))))
    return 2.0 * np.arccos(min(d, 1.0))


# ---------------------------------------------------------------------------
# core types
# ---------------------------------------------------------------------------

def _frozen_array(x, shape) -> np.ndarray:
    a = np.array(x, dtype=np.float64).reshape(shape)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite values in array of shape {shape}")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class RigidPose:
    """An SE(3) element: unit quaternion (x, y, z, w) + translation (m)."""

    quaternion: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = quat_normalize(np.array(self.quaternion, dtype=np.float64).reshape(4))
        q.flags.writeable = False
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "translation", _frozen_array(self.translation, (3,)))

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose(quat_identity(), np.zeros(3))

    @staticmethod
    def from_matrix(M) -> "RigidPose":
        M = np.asarray(M, dtype=np.float64)
        return RigidPose(quat_from_matrix(M[:3, :3]), M[:3, 3])

    @staticmethod
    def from_rotvec(rotvec, translation=(0.0, 0.0, 0.0)) -> "RigidPose":
        return RigidPose(quat_from_rotvec(rotvec), translation)

    def rotation_matrix(self) -> np.ndarray:
        return matrix_from_quat(self.quaternion)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation_matrix()
        M[:3, 3] = self.translation
        return M

    def transform(self, points) -> np.ndarray:
        """Apply the pose to a point (3,) or stack of points (..., 3)."""
        return quat_rotate(self.quaternion, points) + self.translation


def compose(a: RigidPose, b: RigidPose) -> RigidPose:
    """Pose applying b then a (matrix product a @ b)."""
    return RigidPose(quat_mul(a.quaternion, b.quaternion), a.transform(b.translation))


def invert(p: RigidPose) -> RigidPose:
    qi = quat_conj(p.quaternion)
    return RigidPose(qi, -quat_rotate(qi, p.translation))


def perturb_pose(pose: RigidPose, rotvec, delta_t=(0.0, 0.0, 0.0)) -> RigidPose:
    """Right-multiplied tangent step: R <- R exp([rotvec]x), t <- t + delta_t.

    This is the 6-dof local parametrization used by the LM refiners and the
    candidate samplers, so finite-difference checks and samplers agree.
    """
    return RigidPose(
        quat_mul(pose.quaternion, quat_from_rotvec(rotvec)),
        pose.translation + np.asarray(delta_t, dtype=np.float64),
    )


@dataclass(frozen=True, eq=False)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels; no distortion model."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in ("width", "height"):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class ObjectModel:
    """A known object: named keypoints plus vertices for metric evaluation.

    ``symmetric`` selects the symmetry-tolerant distance metric during
    evaluation. ``coplanar_keypoints`` is recorded because it degrades
    (but does not forbid) pose solving.
    """

    class_id: str
    keypoints: np.ndarray
    mesh_vertices: np.ndarray
    symmetric: bool = False

    def __post_init__(self):
        kp = np.array(self.keypoints, dtype=np.float64).reshape(-1, 3)
        if kp.shape[0] < 4:
            raise ValueError("an object model needs at least 4 keypoints")
        kp.flags.writeable = False
        object.__setattr__(self, "keypoints", kp)
        mv = np.array(self.mesh_vertices, dtype=np.float64).reshape(-1, 3)
        mv.flags.writeable = False
        object.__setattr__(self, "mesh_vertices", mv)

    @property
    def num_keypoints(self) -> int:
        return self.keypoints.shape[0]

    @property
    def coplanar_keypoints(self) -> bool:
        c = self.keypoints - self.keypoints.mean(axis=0)
        s = np.linalg.svd(c, compute_uv=False)
        return bool(s[2] < 1e-9 * max(s[0], 1e-12))


@dataclass(frozen=True, eq=False)
class Camera:
    """A posed camera: world-from-camera pose plus intrinsics."""

    pose: RigidPose
    intrinsics: CameraIntrinsics

    def world_to_camera(self) -> RigidPose:
        return invert(self.pose)

    def center(self) -> np.ndarray:
        return self.pose.translation


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def project(pose: RigidPose, K: CameraIntrinsics, p) -> np.ndarray:
    """Project one 3D point through ``pose`` (camera-from-X) and ``K``.

    Raises:
        NonPositiveDepth: camera-frame depth is <= 1e-6 m.
    """
    c = pose.transform(np.asarray(p, dtype=np.float64).reshape(3))
    z = c[2]
    if z <= _MIN_DEPTH:
        raise NonPositiveDepth(f"point depth {z:.3g} m is behind the camera")
    return np.array([K.fx * c[0] / z + K.cx, K.fy * c[1] / z + K.cy])


def project_points(pose: RigidPose, K: CameraIntrinsics, points):
    """Batch projection that flags instead of raising.

    Returns:
        (uv, valid): (N, 2) pixels (NaN where invalid) and (N,) bool mask.
    """
    c = pose.transform(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    z = c[:, 2]
    valid = z > _MIN_DEPTH
    zs = np.where(valid, z, 1.0)
    uv = np.column_stack([K.fx * c[:, 0] / zs + K.cx, K.fy * c[:, 1] / zs + K.cy])
    uv[~valid] = np.nan
    return uv, valid


def unproject(pose: RigidPose, K: CameraIntrinsics, uv, depth):
    """Inverse of :func:`project` at a known camera-frame depth.

    ``pose`` is the same camera-from-X pose handed to ``project``; the
    result is expressed in the X frame. Accepts single pixels or stacks.
    """
    uv = np.asarray(uv, dtype=np.float64)
    single = uv.ndim == 1
    uv = uv.reshape(-1, 2)
    z = np.broadcast_to(np.asarray(depth, dtype=np.float64), (uv.shape[0],))
    cam = np.column_stack([(uv[:, 0] - K.cx) / K.fx * z, (uv[:, 1] - K.cy) / K.fy * z, z])
    out = invert(pose).transform(cam)
    return out[0] if single else out
