"""Multi-view 6-DoF pose fusion.

Per-view keypoint detections are lifted to world-frame pose candidates,
weighted by detection confidence and PnP subset consistency, densified by
Gaussian rotation sampling, scored by a weighted reprojection-consensus
objective across all views, reweighted by rotation-cluster agreement with
the best candidate, augmented by a second wide sampling stage, and finally
polished by Levenberg-Marquardt on the same objective.

The whole pipeline is deterministic given (inputs, seed); detections are
canonically ordered internally, so relabeling the input order does not
change the result.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateConfiguration, EmptyAfterFilter, EmptyCandidateSet, TooFewKeypoints
from .geometry import (ObjectModel, RigidPose, compose, invert, perturb_pose,
                       quat_normalize, rotation_geodesic)
from .optim import levenberg_marquardt
from .pnp import Correspondence, pnp_consistency_weight, solve_pnp
from . import _kernels

logger = logging.getLogger(__name__)

_MIN_DEPTH = 1e-6

PROVENANCE_DETECTED = "detected"
PROVENANCE_ROTATION = "rotation-sampled"
PROVENANCE_STAGE2 = "stage2-sampled"


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ViewDetection:
    """One object detection in one image.

    ``keypoint_pixels`` rows are NaN where the keypoint was not detected;
    confidences are forced to 0 there. ``camera_pose`` is world-from-camera.
    """

    view_id: object
    class_id: str
    keypoint_pixels: np.ndarray
    keypoint_confidences: np.ndarray
    camera_pose: RigidPose
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        raw = list(self.keypoint_pixels)
        px = np.full((len(raw), 2), np.nan)
        for i, p in enumerate(raw):
            if p is not None:
                p = np.asarray(p, dtype=np.float64).reshape(2)
                if np.all(np.isfinite(p)):
                    px[i] = p
        conf = np.array(self.keypoint_confidences, dtype=np.float64).reshape(-1)
        if conf.shape[0] != px.shape[0]:
            raise ValueError("confidences and keypoint pixels must have equal length")
        if np.any(conf < 0) or np.any(conf > 1) or not np.all(np.isfinite(conf)):
            raise ValueError("confidences must be finite and in [0, 1]")
        conf = np.where(np.all(np.isfinite(px), axis=1), conf, 0.0)
        px.flags.writeable = False
        conf.flags.writeable = False
        object.__setattr__(self, "keypoint_pixels", px)
        object.__setattr__(self, "keypoint_confidences", conf)

    @property
    def visible_mask(self) -> np.ndarray:
        return np.all(np.isfinite(self.keypoint_pixels), axis=1)

    @property
    def num_visible(self) -> int:
        return int(self.visible_mask.sum())


@dataclass(frozen=True)
class DetectionWeights:
    """Per-detection weight factors; all in [0, 1], w_resample starts at 1."""

    w_avg: float
    w_pnp: float
    w_resample: float = 1.0

    def __post_init__(self):
        for name in ("w_avg", "w_pnp", "w_resample"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")

    def effective(self, confidences) -> np.ndarray:
        """Per-keypoint effective weights w_resample * w_pnp * w_avg * w_j."""
        return self.w_resample * self.w_pnp * self.w_avg * np.asarray(confidences, dtype=np.float64)


@dataclass
class CandidateSet:
    """Ordered pose candidates with per-candidate provenance tags."""

    poses: list
    provenance: list

    def __post_init__(self):
        if len(self.poses) != len(self.provenance):
            raise ValueError("poses and provenance must have equal length")

    def __len__(self):
        return len(self.poses)

    def extended(self, other: "CandidateSet") -> "CandidateSet":
        return CandidateSet(self.poses + other.poses, self.provenance + other.provenance)


@dataclass(frozen=True)
class FusedEstimate:
    """Winning pose for one object instance plus its weight audit trail."""

    pose: RigidPose
    objective: float
    detection_ids: tuple
    weights: tuple


@dataclass
class FusionConfig:
    """Tunable parameters; sampling defaults follow the reported protocol."""

    stage1_rotation_samples: int = 20
    stage1_rotation_sigma: float = 0.001
    stage2_translation_samples: int = 100
    stage2_translation_sigma: float = 0.25
    stage2_translation_unit: float = 1.0  # scale factor mapping sigma to meters
    stage2_rotation_samples: int = 10
    stage2_rotation_sigma: float = 0.01
    confidence_floor: float = 0.05
    pairwise_distance_threshold: float = 0.3
    resample_sigma: float = 0.1
    instance_cluster_radius: float = 0.15
    behind_camera_penalty: float = 1e4
    pnp_tau_px: float = 5.0
    pnp_weight_floor: float = 0.1
    xmeans_max_clusters: int = 10

    def __post_init__(self):
        for name in ("stage1_rotation_sigma", "stage2_translation_sigma", "stage2_rotation_sigma",
                     "resample_sigma", "instance_cluster_radius"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("stage1_rotation_samples", "stage2_translation_samples",
                     "stage2_rotation_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


# ---------------------------------------------------------------------------
# weights and lifting
# ---------------------------------------------------------------------------

def compute_avg_weight(detection: ViewDetection) -> float:
    """Arithmetic mean of all keypoint confidences (absent keypoints count 0)."""
    conf = detection.keypoint_confidences
    if conf.size < 1:
        raise ValueError("detection carries no keypoints")
    return float(conf.mean())


def lift_detection(detection: ViewDetection, model: ObjectModel) -> RigidPose:
    """World-frame object pose from one detection via PnP in its camera."""
    vis = detection.visible_mask
    if vis.sum() < 4:
        raise TooFewKeypoints(f"{int(vis.sum())} visible keypoints; need >= 4")
    if model.num_keypoints != detection.keypoint_pixels.shape[0]:
        raise ValueError("detection keypoint count does not match the model")
    corr = [
        Correspondence(model.keypoints[j], detection.keypoint_pixels[j],
                       float(detection.keypoint_confidences[j]))
        for j in np.where(vis)[0]
    ]
    result = solve_pnp(corr, detection.intrinsics)
    return compose(detection.camera_pose, result.pose)


def filter_candidates(entries, cfg: FusionConfig):
    """Confidence-floor then mutual-proximity filtering of lifted candidates.

    ``entries`` are (RigidPose, DetectionWeights) pairs. An entry survives
    when w_avg * w_pnp clears the floor and, unless it is the only
    survivor, its translation lies within the pairwise distance threshold
    of at least one other survivor.

    Raises:
        EmptyAfterFilter: nothing survived.
    """
    entries = list(entries)
    mask = _filter_mask(
        np.array([p.translation for p, _ in entries]).reshape(-1, 3),
        np.array([w.w_avg * w.w_pnp for _, w in entries]),
        cfg,
    )
    kept = [e for e, m in zip(entries, mask) if m]
    if not kept:
        raise EmptyAfterFilter("no detection survived confidence/distance filtering")
    return kept


def _filter_mask(translations, conf_scores, cfg: FusionConfig) -> np.ndarray:
    mask = conf_scores >= cfg.confidence_floor
    idx = np.where(mask)[0]
    if idx.size <= 1:
        return mask
    t = translations[idx]
    d = np.linalg.norm(t[:, None, :] - t[None, :, :], axis=2)
    np.fill_diagonal(d, np.inf)
    near = d.min(axis=1) <= cfg.pairwise_distance_threshold
    mask[idx[~near]] = False
    return mask


# ---------------------------------------------------------------------------
# candidate sampling
# ---------------------------------------------------------------------------

def sample_rotation_candidates(base_poses, count: int, sigma: float, rng_seed) -> CandidateSet:
    """Gaussian axis-angle rotation samples around each base pose.

    Base poses come first (tagged ``detected``), then ``count`` samples per
    base in base order (tagged ``rotation-sampled``); translations are
    carried over unchanged. Deterministic given the seed.
    """
    base_poses = list(base_poses)
    rng = np.random.default_rng(rng_seed)
    rotvecs = rng.normal(0.0, sigma, size=(len(base_poses), count, 3))
    poses = list(base_poses)
    tags = [PROVENANCE_DETECTED] * len(base_poses)
    for i, base in enumerate(base_poses):
        for k in range(count):
            poses.append(perturb_pose(base, rotvecs[i, k]))
            tags.append(PROVENANCE_ROTATION)
    return CandidateSet(poses, tags)


def augment_stage2(t_star: RigidPose, cfg: FusionConfig, rng_seed) -> CandidateSet:
    """Wide-variance samples around the current best pose, best included first."""
    rng = np.random.default_rng(rng_seed)
    poses = [t_star]
    tags = [PROVENANCE_DETECTED]
    sigma_t = cfg.stage2_translation_sigma * cfg.stage2_translation_unit
    for dt in rng.normal(0.0, sigma_t, size=(cfg.stage2_translation_samples, 3)):
        poses.append(RigidPose(t_star.quaternion, t_star.translation + dt))
        tags.append(PROVENANCE_STAGE2)
    for rv in rng.normal(0.0, cfg.stage2_rotation_sigma, size=(cfg.stage2_rotation_samples, 3)):
        poses.append(perturb_pose(t_star, rv))
        tags.append(PROVENANCE_STAGE2)
    return CandidateSet(poses, tags)


# ---------------------------------------------------------------------------
# scoring (the argmin objective)
# ---------------------------------------------------------------------------

class _ReprojectionProblem:
    """Packed arrays for the consensus objective over one instance.

    Terms pair every detection i with every model keypoint j; the target
    is the projection of the lifted pose of detection i into its own
    camera. Invalid targets and behind-camera candidate projections incur
    a finite per-keypoint penalty (times the term weight).
    """

    def __init__(self, detections, lifted_poses, weights, model: ObjectModel,
                 penalty: float = 1e4):
        m = len(detections)
        if not (m == len(lifted_poses) == len(weights)):
            raise ValueError("detections, lifted poses and weights must align")
        n = model.num_keypoints
        self.model = model
        self.penalty = float(penalty)
        self.keypoints = model.keypoints
        self.view_rot = np.empty((m, 3, 3))
        self.view_t = np.empty((m, 3))
        self.intr = np.empty((m, 4))
        self.target_uv = np.full((m, n, 2), np.nan)
        self.target_ok = np.zeros((m, n), dtype=np.uint8)
        self.weights = np.empty((m, n))
        for i, (det, lifted, w) in enumerate(zip(detections, lifted_poses, weights)):
            if det.keypoint_pixels.shape[0] != n:
                raise ValueError("detection keypoint count does not match the model")
            w2c = invert(det.camera_pose)
            self.view_rot[i] = w2c.rotation_matrix()
            self.view_t[i] = w2c.translation
            K = det.intrinsics
            self.intr[i] = (K.fx, K.fy, K.cx, K.cy)
            cam = compose(w2c, lifted).transform(self.keypoints)
            z = cam[:, 2]
            ok = z > _MIN_DEPTH
            zs = np.where(ok, z, 1.0)
            self.target_uv[i, :, 0] = K.fx * cam[:, 0] / zs + K.cx
            self.target_uv[i, :, 1] = K.fy * cam[:, 1] / zs + K.cy
            self.target_uv[i, ~ok] = np.nan
            self.target_ok[i] = ok
            self.weights[i] = w.effective(det.keypoint_confidences)
        # residual terms: positive weight and a valid target
        ti, tj = np.nonzero((self.weights > 0) & (self.target_ok > 0))
        self._ti, self._tj = ti, tj
        self._sw = np.sqrt(self.weights[ti, tj])

    def score(self, poses) -> np.ndarray:
        """Objective for a batch of candidate poses."""
        cand_rot = np.stack([p.rotation_matrix() for p in poses])
        cand_t = np.stack([p.translation for p in poses])
        return _kernels.score_candidates(
            cand_rot, cand_t, self.view_rot, self.view_t, self.intr,
            self.keypoints, self.target_uv, self.target_ok, self.weights, self.penalty)

    def objective(self, pose: RigidPose) -> float:
        return float(self.score([pose])[0])

    def residuals_and_jacobian(self, pose: RigidPose):
        """Stacked weighted residuals and their 6-dof tangent Jacobian.

        Terms whose candidate projection is behind the camera are excluded
        here (the penalty is flat); step acceptance in LM uses the full
        penalized objective instead.
        """
        ti, tj = self._ti, self._tj
        kp = self.keypoints[tj]
        R = pose.rotation_matrix()
        world = kp @ R.T + pose.translation
        vR = self.view_rot[ti]
        cam = np.einsum("tab,tb->ta", vR, world) + self.view_t[ti]
        z = cam[:, 2]
        in_front = z > _MIN_DEPTH
        zc = np.where(in_front, z, 1.0)
        fx, fy, cx, cy = (self.intr[ti, k] for k in range(4))
        uv = np.column_stack([fx * cam[:, 0] / zc + cx, fy * cam[:, 1] / zc + cy])
        res = (uv - self.target_uv[ti, tj]) * self._sw[:, None]

        dproj = np.zeros((ti.size, 2, 3))
        dproj[:, 0, 0] = fx / zc
        dproj[:, 0, 2] = -fx * cam[:, 0] / (zc * zc)
        dproj[:, 1, 1] = fy / zc
        dproj[:, 1, 2] = -fy * cam[:, 1] / (zc * zc)

        S = np.zeros((ti.size, 3, 3))
        S[:, 0, 1], S[:, 0, 2] = -kp[:, 2], kp[:, 1]
        S[:, 1, 0], S[:, 1, 2] = kp[:, 2], -kp[:, 0]
        S[:, 2, 0], S[:, 2, 1] = -kp[:, 1], kp[:, 0]
        d_rot = np.einsum("tab,bc,tcd->tad", vR, -R, S)
        J = np.concatenate([np.einsum("tab,tbc->tac", dproj, d_rot),
                            np.einsum("tab,tbc->tac", dproj, vR)], axis=2)
        J *= self._sw[:, None, None]

        keep = np.repeat(in_front, 2)
        return res.reshape(-1)[keep], J.reshape(-1, 6)[keep]


def score_candidate(pose: RigidPose, detections, lifted_poses, weights,
                    model: ObjectModel, penalty: float = 1e4) -> float:
    """Weighted squared reprojection-consensus error of one candidate pose."""
    return _ReprojectionProblem(detections, lifted_poses, weights, model, penalty).objective(pose)


def select_best(candidates: CandidateSet, detections, lifted_poses, weights,
                model: ObjectModel, penalty: float = 1e4) -> FusedEstimate:
    """Argmin of the consensus objective; ties break to the lowest index."""
    if len(candidates) == 0:
        raise EmptyCandidateSet("cannot select from an empty candidate set")
    problem = _ReprojectionProblem(detections, lifted_poses, weights, model, penalty)
    scores = problem.score(candidates.poses)
    idx = int(np.argmin(scores))
    return FusedEstimate(
        candidates.poses[idx], float(scores[idx]),
        tuple(d.view_id for d in detections), tuple(weights))


def refine_pose_lm(pose: RigidPose, detections, lifted_poses, weights,
                   model: ObjectModel, penalty: float = 1e4,
                   max_iterations: int = 100, full_output: bool = False):
    """Levenberg-Marquardt polish of the consensus objective.

    The returned objective never exceeds the input objective; the worst
    case returns the input pose unchanged.
    """
    problem = _ReprojectionProblem(detections, lifted_poses, weights, model, penalty)
    result = levenberg_marquardt(
        pose, problem.residuals_and_jacobian,
        lambda p, d: perturb_pose(p, d[:3], d[3:]),
        objective=problem.objective, max_iterations=max_iterations)
    return (result.state, result) if full_output else result.state


# ---------------------------------------------------------------------------
# X-means rotation clustering
# ---------------------------------------------------------------------------

@dataclass
class RotationCluster:
    mean: np.ndarray
    members: list


def _quat_mean(quats, idx):
    M = np.zeros((4, 4))
    for i in idx:
        q = quats[i]
        M += np.outer(q, q)
    _, vecs = np.linalg.eigh(M)
    mean = vecs[:, -1]
    nz = np.nonzero(np.abs(mean) > 1e-12)[0]
    if nz.size and mean[nz[-1]] < 0:
        mean = -mean
    return quat_normalize(mean)


def _bic(sq_dist_sums, sizes, dims=3):
    total = int(sum(sizes))
    k = len(sizes)
    if total <= k:
        return -np.inf
    var = max(float(sum(sq_dist_sums)) / (total - k), 1e-12)
    ll = 0.0
    for rn in sizes:
        if rn == 0:
            continue
        ll += (rn * np.log(rn) - rn * np.log(total) - 0.5 * rn * np.log(2.0 * np.pi)
               - 0.5 * rn * dims * np.log(var) - 0.5 * (rn - k))
    return ll - 0.5 * k * (dims + 1) * np.log(total)


def _two_means(quats, idx):
    """Geodesic 2-means with deterministic farthest-pair seeding."""
    best_pair, best_d = None, -1.0
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            d = rotation_geodesic(quats[idx[a]], quats[idx[b]])
            if d > best_d + 1e-15:
                best_d, best_pair = d, (idx[a], idx[b])
    if best_pair is None or best_d < 1e-9:
        return None
    means = [quats[best_pair[0]], quats[best_pair[1]]]
    assign = None
    for _ in range(50):
        d0 = np.array([rotation_geodesic(quats[i], means[0]) for i in idx])
        d1 = np.array([rotation_geodesic(quats[i], means[1]) for i in idx])
        new_assign = d1 < d0
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        if not assign.any() or assign.all():  # empty side: move farthest point over
            far = int(np.argmax(np.maximum(d0, d1)))
            assign = np.zeros(len(idx), dtype=bool)
            assign[far] = True
        means = [_quat_mean(quats, [i for i, a in zip(idx, assign) if not a]),
                 _quat_mean(quats, [i for i, a in zip(idx, assign) if a])]
    left = [i for i, a in zip(idx, assign) if not a]
    right = [i for i, a in zip(idx, assign) if a]
    if not left or not right:
        return None
    return (left, means[0]), (right, means[1])


def xmeans_rotations(rotations, max_k: int = 10):
    """Cluster unit quaternions by recursive BIC-scored 2-means splits.

    Distance is the geodesic angle (sign-insensitive); cluster means are
    principal eigenvectors of the member outer-product sum. Returns
    clusters ordered by smallest member index.
    """
    quats = np.array([quat_normalize(np.asarray(q, dtype=np.float64).reshape(4))
                      for q in rotations])
    if quats.shape[0] == 0:
        raise ValueError("need at least one rotation")

    pending = [list(range(quats.shape[0]))]
    final = []
    while pending:
        idx = pending.pop(0)
        n_clusters = len(final) + len(pending) + 1
        if len(idx) < 2 or n_clusters >= max_k:
            final.append(idx)
            continue
        mean = _quat_mean(quats, idx)
        sq = [rotation_geodesic(quats[i], mean) ** 2 for i in idx]
        if sum(sq) / len(idx) < 1e-16:
            final.append(idx)
            continue
        split = _two_means(quats, idx)
        if split is None:
            final.append(idx)
            continue
        (left, ml), (right, mr) = split
        sql = sum(rotation_geodesic(quats[i], ml) ** 2 for i in left)
        sqr = sum(rotation_geodesic(quats[i], mr) ** 2 for i in right)
        if _bic([sql, sqr], [len(left), len(right)]) > _bic([sum(sq)], [len(idx)]) + 1e-9:
            pending.extend([left, right])
        else:
            final.append(idx)

    final.sort(key=min)
    return [RotationCluster(_quat_mean(quats, idx), sorted(idx)) for idx in final]


def compute_resample_weights(clusters, t_star: RigidPose, resample_sigma: float) -> np.ndarray:
    """Gaussian-of-geodesic-angle weight shared by every member of a cluster."""
    n = max(max(c.members) for c in clusters) + 1
    out = np.zeros(n)
    for c in clusters:
        theta = rotation_geodesic(c.mean, t_star.quaternion)
        w = float(np.exp(-theta * theta / (2.0 * resample_sigma ** 2)))
        for i in c.members:
            out[i] = w
    return out


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

def _canonical_order(detections):
    def key(d):
        return (str(d.view_id), d.keypoint_pixels.tobytes(), d.keypoint_confidences.tobytes())
    return sorted(detections, key=key)


def _instance_groups(translations, radius):
    """Single-linkage agglomeration of translations at the given radius."""
    n = translations.shape[0]
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(translations[i] - translations[j]) <= radius:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return [groups[r] for r in sorted(groups)]


def fuse_object_poses(detections, model: ObjectModel, cfg: FusionConfig | None = None,
                      rng_seed: int = 0):
    """Fuse all detections of one object class into per-instance estimates.

    Stages: lift each detection by PnP, agglomerate instances by
    translation, weight (w_avg, w_pnp), filter, rotation-sample, pick the
    consensus argmin, recluster rotations for resampling weights, widen
    with stage-2 samples, re-pick, and LM-refine.

    Returns a list of FusedEstimate, one per surviving instance.
    """
    cfg = cfg if cfg is not None else FusionConfig()
    detections = _canonical_order(detections)
    if not detections:
        return []

    lifted, weights, kept = [], [], []
    for d in detections:
        try:
            pose = lift_detection(d, model)
        except (TooFewKeypoints, DegenerateConfiguration) as exc:
            logger.debug("dropping detection in view %s: %s", d.view_id, exc)
            continue
        try:
            w_pnp = pnp_consistency_weight(d, model, d.intrinsics, cfg.pnp_tau_px)
        except TooFewKeypoints:
            w_pnp = cfg.pnp_weight_floor
        kept.append(d)
        lifted.append(pose)
        weights.append(DetectionWeights(compute_avg_weight(d), w_pnp))
    if not kept:
        return []

    translations = np.array([p.translation for p in lifted])
    estimates = []
    for inst_no, members in enumerate(_instance_groups(translations, cfg.instance_cluster_radius)):
        dets = [kept[i] for i in members]
        lif = [lifted[i] for i in members]
        wts = [weights[i] for i in members]

        mask = _filter_mask(np.array([p.translation for p in lif]),
                            np.array([w.w_avg * w.w_pnp for w in wts]), cfg)
        if not mask.any():
            logger.debug("instance %d empty after filtering", inst_no)
            continue
        dets = [d for d, m in zip(dets, mask) if m]
        lif = [p for p, m in zip(lif, mask) if m]
        wts = [w for w, m in zip(wts, mask) if m]

        seed1, seed2 = np.random.SeedSequence(entropy=(rng_seed, inst_no)).spawn(2)
        stage1 = sample_rotation_candidates(
            lif, cfg.stage1_rotation_samples, cfg.stage1_rotation_sigma, seed1)
        best = select_best(stage1, dets, lif, wts, model, cfg.behind_camera_penalty)

        clusters = xmeans_rotations([p.quaternion for p in lif], cfg.xmeans_max_clusters)
        w_res = compute_resample_weights(clusters, best.pose, cfg.resample_sigma)
        wts = [replace(w, w_resample=float(w_res[i])) for i, w in enumerate(wts)]

        stage2 = augment_stage2(best.pose, cfg, seed2)
        full_set = CandidateSet(stage1.poses + stage2.poses[1:],
                                stage1.provenance + stage2.provenance[1:])
        best = select_best(full_set, dets, lif, wts, model, cfg.behind_camera_penalty)

        refined = refine_pose_lm(best.pose, dets, lif, wts, model, cfg.behind_camera_penalty)
        objective = score_candidate(refined, dets, lif, wts, model, cfg.behind_camera_penalty)
        estimates.append(FusedEstimate(refined, objective,
                                       tuple(d.view_id for d in dets), tuple(wts)))
    return estimates
