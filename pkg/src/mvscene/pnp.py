"""Perspective-n-point pose recovery and subset-consistency weighting.

``solve_pnp`` minimizes the *weighted* squared reprojection error. OpenCV
provides the direct linear initialization (EPnP / SQPnP / IPPE depending
on point count and planarity); the weighted objective is then minimized
by a damped Gauss-Newton refinement over the 6-dof tangent chart, which
is what defines the returned pose.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import DegenerateConfiguration, TooFewKeypoints
from .geometry import CameraIntrinsics, ObjectModel, RigidPose, perturb_pose, project_points
from .optim import levenberg_marquardt

_MIN_DEPTH = 1e-6


@dataclass(frozen=True, eq=False)
class Correspondence:
    """One 2D-3D match: model point (m), image point (px), weight >= 0."""

    model_point: np.ndarray
    image_point: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        mp = np.array(self.model_point, dtype=np.float64).reshape(3)
        ip = np.array(self.image_point, dtype=np.float64).reshape(2)
        if not (np.all(np.isfinite(mp)) and np.all(np.isfinite(ip)) and np.isfinite(self.weight)):
            raise ValueError("correspondence coordinates and weight must be finite")
        if self.weight < 0:
            raise ValueError("correspondence weight must be nonnegative")
        mp.flags.writeable = False
        ip.flags.writeable = False
        object.__setattr__(self, "model_point", mp)
        object.__setattr__(self, "image_point", ip)


@dataclass(frozen=True)
class PnPResult:
    """Solve output; ``converged=False`` tags a best-effort, low-confidence pose."""

    pose: RigidPose
    rms_px: float
    converged: bool


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _reprojection_cost(pose, obj, img, w, K):
    cam = pose.transform(obj)
    z = cam[:, 2]
    if np.any((w > 0) & (z <= _MIN_DEPTH)):
        return np.inf
    zs = np.where(z > _MIN_DEPTH, z, 1.0)
    u = K.fx * cam[:, 0] / zs + K.cx
    v = K.fy * cam[:, 1] / zs + K.cy
    d = np.column_stack([u, v]) - img
    return float(np.sum(w * np.sum(d * d, axis=1)))


def _residuals_and_jacobian(pose, obj, img, w, K):
    R = pose.rotation_matrix()
    cam = obj @ R.T + pose.translation
    z = np.clip(cam[:, 2], _MIN_DEPTH, None)
    sw = np.sqrt(w)

    u = K.fx * cam[:, 0] / z + K.cx
    v = K.fy * cam[:, 1] / z + K.cy
    r = (np.column_stack([u, v]) - img) * sw[:, None]

    n = obj.shape[0]
    J = np.empty((n, 2, 6))
    dproj = np.zeros((n, 2, 3))
    dproj[:, 0, 0] = K.fx / z
    dproj[:, 0, 2] = -K.fx * cam[:, 0] / (z * z)
    dproj[:, 1, 1] = K.fy / z
    dproj[:, 1, 2] = -K.fy * cam[:, 1] / (z * z)
    for i in range(n):
        dcam = np.hstack([-R @ _skew(obj[i]), np.eye(3)])
        J[i] = sw[i] * (dproj[i] @ dcam)
    return r.reshape(-1), J.reshape(-1, 6)


def _refine(obj, img, w, K, pose0, max_iterations):
    res = levenberg_marquardt(
        pose0,
        lambda p: _residuals_and_jacobian(p, obj, img, w, K),
        lambda p, d: perturb_pose(p, d[:3], d[3:]),
        objective=lambda p: _reprojection_cost(p, obj, img, w, K),
        max_iterations=max_iterations,
    )
    return res.state, res.objective, res.converged


def _cv2_init(obj, img, K, planar):
    n = obj.shape[0]
    if planar:
        flag = cv2.SOLVEPNP_IPPE
    elif n >= 6:
        flag = cv2.SOLVEPNP_EPNP
    else:
        flag = cv2.SOLVEPNP_SQPNP
    try:
        ok, rvec, tvec = cv2.solvePnP(
            obj.reshape(-1, 1, 3), img.reshape(-1, 1, 2), K.matrix(), None, flags=flag)
    except cv2.error:
        return None
    if not ok or not np.all(np.isfinite(rvec)) or not np.all(np.isfinite(tvec)):
        return None
    return RigidPose.from_rotvec(rvec.ravel(), tvec.ravel())


def _heuristic_init(obj, img, K):
    # depth from the ratio of metric to pixel spread, facing the camera
    c_m = obj.mean(axis=0)
    c_px = img.mean(axis=0)
    r_m = np.mean(np.linalg.norm(obj - c_m, axis=1))
    r_px = np.mean(np.linalg.norm(img - c_px, axis=1))
    z0 = np.clip(K.fx * r_m / max(r_px, 1.0), 0.05, 50.0)
    t = np.array([(c_px[0] - K.cx) / K.fx * z0, (c_px[1] - K.cy) / K.fy * z0, z0]) - c_m
    return RigidPose(np.array([0.0, 0.0, 0.0, 1.0]), t)


def _solve_weighted(obj, img, w, K, inits, max_iterations=100):
    best = None
    for pose0 in inits:
        if pose0 is None:
            continue
        pose, cost, conv = _refine(obj, img, w, K, pose0, max_iterations)
        if not np.isfinite(cost):
            continue
        if best is None or cost < best[1]:
            best = (pose, cost, conv)
    if best is None:
        raise DegenerateConfiguration("no PnP initialization produced a finite objective")
    pose, cost, conv = best
    wsum = float(np.sum(w))
    rms = float(np.sqrt(cost / wsum)) if wsum > 0 else 0.0
    return PnPResult(pose, rms, conv)


def solve_pnp(correspondences, K: CameraIntrinsics, initial_guess: RigidPose | None = None,
              max_iterations: int = 100) -> PnPResult:
    """Recover the camera-from-model pose from >= 4 weighted correspondences.

    Deterministic given inputs. The objective is invariant to uniform
    positive rescaling of the weights. When a guess is supplied the result
    never has a larger residual than the guess.

    Raises:
        DegenerateConfiguration: fewer than 4 points, or model points that
            do not span at least 2 dimensions.
    """
    if len(correspondences) < 4:
        raise DegenerateConfiguration("PnP needs at least 4 correspondences")
    obj = np.array([c.model_point for c in correspondences])
    img = np.array([c.image_point for c in correspondences])
    w = np.array([c.weight for c in correspondences], dtype=np.float64)

    centered = obj - obj.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[1] < 1e-9 * max(s[0], 1e-12):
        raise DegenerateConfiguration("model points span fewer than 2 dimensions")
    planar = s[2] < 1e-6 * s[0]

    inits = [_cv2_init(obj, img, K, planar), initial_guess, _heuristic_init(obj, img, K)]
    return _solve_weighted(obj, img, w, K, inits, max_iterations)


def spread_to_weight(spread_px: float, tau_px: float = 5.0) -> float:
    """Map a mean reprojection spread to a stability weight in (0, 1]."""
    return float(np.exp(-spread_px / tau_px))


def pnp_consistency_weight(detection, model: ObjectModel, K: CameraIntrinsics,
                           tau_px: float = 5.0) -> float:
    """Keypoint-stability weight in (0, 1] from leave-one-out re-solving.

    Solves the pose once with every visible keypoint and once per
    leave-one-out subset; the spread of each keypoint's reprojection across
    the subset poses (relative to the all-points pose) is averaged and
    mapped through exp(-spread/tau_px).

    Raises:
        TooFewKeypoints: fewer than 5 visible keypoints (subsets would
            drop below the PnP minimum); callers substitute a floor weight.
    """
    pixels = np.asarray(detection.keypoint_pixels, dtype=np.float64)
    conf = np.asarray(detection.keypoint_confidences, dtype=np.float64)
    visible = np.where(np.all(np.isfinite(pixels), axis=1))[0]
    if visible.size < 5:
        raise TooFewKeypoints(f"{visible.size} visible keypoints; need >= 5")

    obj = model.keypoints[visible]
    img = pixels[visible]
    w = conf[visible]

    full = solve_pnp(
        [Correspondence(o, i, float(wt)) for o, i, wt in zip(obj, img, w)], K)
    uv_full, ok_full = project_points(full.pose, K, obj)

    far = float(np.hypot(K.width, K.height))
    m = visible.size
    spreads = np.zeros(m)
    for drop in range(m):
        keep = np.arange(m) != drop
        sub = _solve_weighted(obj[keep], img[keep], w[keep], K, [full.pose])
        uv_sub, ok_sub = project_points(sub.pose, K, obj)
        d = np.linalg.norm(uv_sub - uv_full, axis=1)
        d = np.where(ok_sub & ok_full, d, far)
        spreads += d
    spreads /= m

    return spread_to_weight(float(spreads.mean()), tau_px)
