"""Multi-view segmentation voting and RANSAC primitive-shape fitting.

Per-view instance segmentations (as world-frame point sets once
unprojected through the virtual depth maps) are combined sequentially:
overlapping instances merge, DBSCAN denoises after every view, and
non-maximal suppression removes redundant sets. Each surviving set is
fitted to a solid cuboid or cylinder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .depthmap import DepthMap
from .errors import EmptyUnprojection, FitRejected, InsufficientPoints
from .geometry import (CameraIntrinsics, RigidPose, matrix_from_quat, quat_from_matrix,
                       quat_from_rotvec, quat_normalize, quat_rotate)

CLASS_ORDER = ("cuboid", "cylinder")


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SegmentationInstance:
    """One per-view instance: a pixel mask and/or its unprojected points."""

    view_id: object
    shape_class: str
    points: np.ndarray | None = None
    mask: np.ndarray | None = None
    confidence: float = 1.0

    def __post_init__(self):
        if self.shape_class not in CLASS_ORDER:
            raise ValueError(f"shape_class must be one of {CLASS_ORDER}")
        if self.points is None and self.mask is None:
            raise ValueError("instance needs a mask or a point set")
        if self.points is not None:
            self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
            if self.points.shape[0] == 0:
                raise ValueError("instance point set must be nonempty")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if not self.mask.any():
                raise ValueError("instance mask must be nonempty")


@dataclass(eq=False)
class AggregatedSet:
    """A merged multi-view point set with per-class vote tallies."""

    points: np.ndarray
    votes: dict = field(default_factory=dict)
    view_ids: list = field(default_factory=list)

    @property
    def label(self) -> str:
        best, best_v = None, -1.0
        for cls in CLASS_ORDER:  # iteration order breaks ties toward lower index
            v = self.votes.get(cls, 0.0)
            if v > best_v:
                best, best_v = cls, v
        return best


@dataclass(eq=False)
class LabeledVoxelGrid:
    """Dense voxel grid of class labels (-1 empty) and per-class vote counts."""

    origin: np.ndarray
    voxel_size: float
    labels: np.ndarray
    votes: np.ndarray


@dataclass(eq=False)
class PrimitiveShape:
    """Parameterized solid: cuboid (pose + extents) or cylinder (pose z-axis,
    radius, height), with fit statistics."""

    kind: str
    pose: RigidPose
    extents: np.ndarray | None = None
    radius: float | None = None
    height: float | None = None
    inlier_count: int = 0
    fit_rms: float = 0.0

    def __post_init__(self):
        if self.kind == "cuboid":
            self.extents = np.asarray(self.extents, dtype=np.float64).reshape(3)
            if np.any(self.extents <= 0):
                raise ValueError("cuboid extents must be positive")
        elif self.kind == "cylinder":
            if self.radius is None or self.height is None or self.radius <= 0 or self.height <= 0:
                raise ValueError("cylinder needs positive radius and height")
        else:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if self.fit_rms < 0:
            raise ValueError("fit_rms must be nonnegative")

    def surface_area(self) -> float:
        if self.kind == "cuboid":
            a, b, c = self.extents
            return 2.0 * (a * b + b * c + a * c)
        return 2.0 * np.pi * self.radius * (self.radius + self.height)


@dataclass
class PrimitiveConfig:
    overlap_threshold: float = 0.3
    vote_voxel: float = 0.01
    dbscan_eps: float = 0.01
    dbscan_min_pts: int = 10
    nms_overlap: float = 0.5
    normal_k: int = 15
    ransac_iterations: int = 300
    cylinder_tol: float = 0.005
    cuboid_tol: float = 0.005
    min_inlier_ratio: float = 0.5
    min_points: int = 20
    max_cylinder_radius: float = 0.5
    box_search_half_deg: float = 15.0
    box_search_step_deg: float = 1.5
    extent_quantile: float = 0.01


# ---------------------------------------------------------------------------
# unprojection and voting
# ---------------------------------------------------------------------------

def unproject_instance(inst: SegmentationInstance, depth: DepthMap,
                       camera_pose: RigidPose, K: CameraIntrinsics) -> np.ndarray:
    """Back-project an instance mask through a depth map into world points.

    Raises:
        EmptyUnprojection: no masked pixel carries valid depth.
    """
    if inst.mask is None:
        raise ValueError("instance carries no pixel mask")
    if inst.mask.shape != (depth.height, depth.width):
        raise ValueError("mask shape does not match the depth map")
    sel = inst.mask & depth.valid
    if not sel.any():
        raise EmptyUnprojection(f"view {inst.view_id}: mask hit no valid depth")
    ys, xs = np.nonzero(sel)
    z = depth.depth[ys, xs]
    cam = np.column_stack([(xs - K.cx) / K.fx * z, (ys - K.cy) / K.fy * z, z])
    return camera_pose.transform(cam)


_VOXEL_BIAS = 1 << 20  # voxel indices must stay within +-2^20 (10 km at 1 cm)


def _voxel_keys(points, size) -> set:
    keys = np.floor(np.asarray(points) / size).astype(np.int64) + _VOXEL_BIAS
    packed = (keys[:, 0] << 42) | (keys[:, 1] << 21) | keys[:, 2]
    return set(packed.tolist())


def voxel_iou(points_a, points_b, voxel_size: float) -> float:
    a = _voxel_keys(points_a, voxel_size)
    b = _voxel_keys(points_b, voxel_size)
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def _dedupe_rows(points):
    _, first = np.unique(points, axis=0, return_index=True)
    return points[np.sort(first)]


def _set_voxels(s: AggregatedSet, size):
    if getattr(s, "_vox", None) is None or getattr(s, "_vox_size", None) != size:
        s._vox = _voxel_keys(s.points, size)
        s._vox_size = size
    return s._vox


def _fold_instances(sets, instances, overlap_threshold, voxel_size):
    """Merge each incoming instance into its best-overlapping set (or start one)."""
    for inst in instances:
        if inst.points is None:
            raise ValueError("sequential aggregation needs unprojected instances")
        ivox = _voxel_keys(inst.points, voxel_size)
        best, best_iou = None, 0.0
        for s in sets:
            svox = _set_voxels(s, voxel_size)
            union = len(ivox | svox)
            iou = len(ivox & svox) / union if union else 0.0
            if iou > best_iou:
                best, best_iou = s, iou
        if best is not None and best_iou >= overlap_threshold:
            best.points = _dedupe_rows(np.vstack([best.points, inst.points]))
            best._vox = _set_voxels(best, voxel_size) | ivox
            best.votes[inst.shape_class] = best.votes.get(inst.shape_class, 0.0) + inst.confidence
            best.view_ids.append(inst.view_id)
        else:
            new = AggregatedSet(_dedupe_rows(np.asarray(inst.points, dtype=np.float64)),
                                {inst.shape_class: inst.confidence}, [inst.view_id])
            new._vox = ivox
            new._vox_size = voxel_size
            sets.append(new)
    return sets


def _by_view(instances):
    order = sorted({i.view_id for i in instances}, key=str)
    return [(v, [i for i in instances if i.view_id == v]) for v in order]


def sequential_aggregate(instances, overlap_threshold: float = 0.3,
                         voxel_size: float = 0.01):
    """Fold per-view instances in view order, merging by voxel IoU.

    Exact duplicate points are dropped on merge, so replaying an already
    seen view cannot change any downstream density decision.
    """
    sets = []
    for _, view_insts in _by_view(instances):
        _fold_instances(sets, view_insts, overlap_threshold, voxel_size)
    return sets


def dbscan(points, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN labels per point (-1 = noise), deterministic in input order.

    A point is core when its eps-neighborhood, itself included, holds at
    least ``min_pts`` points. Clusters are numbered by the scan order of
    their first core point; a border point joins the lowest-numbered
    cluster among its core neighbors. This matches the classic queue
    expansion exactly while running on vectorized neighborhood queries.
    """
    if eps <= 0 or min_pts < 1:
        raise ValueError("eps must be positive and min_pts >= 1")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    tree = cKDTree(pts)
    workers = -1 if n >= 50_000 else 1
    counts = tree.query_ball_point(pts, r=eps, return_length=True, workers=workers)
    core_idx = np.where(counts >= min_pts)[0]
    if core_idx.size == 0:
        return labels

    core_tree = cKDTree(pts[core_idx])
    pairs = core_tree.query_pairs(r=eps, output_type="ndarray")
    graph = coo_matrix((np.ones(pairs.shape[0]), (pairs[:, 0], pairs[:, 1])),
                       shape=(core_idx.size, core_idx.size))
    n_comp, comp = connected_components(graph, directed=False)

    # components numbered by their first core point in scan order
    # (core_idx is ascending, so first occurrence in comp IS scan order)
    _, first = np.unique(comp, return_index=True)
    order = np.empty(n_comp, dtype=np.int64)
    order[np.argsort(first)] = np.arange(n_comp)
    labels[core_idx] = order[comp]

    non_core = np.setdiff1d(np.arange(n), core_idx, assume_unique=True)
    if non_core.size:
        lists = core_tree.query_ball_point(pts[non_core], r=eps)
        for i, nb in zip(non_core, lists):
            if nb:
                labels[i] = order[comp[nb]].min()
    return labels


def nms_by_size(instances, overlap_threshold: float = 0.5, voxel_size: float = 0.01):
    """Greedy size-ordered suppression of overlapping point sets.

    Keeps an instance iff its voxel IoU with every already-kept instance
    stays below the threshold; returns survivors in input order.
    """
    counts = [-(inst.points.shape[0]) for inst in instances]
    order = np.argsort(counts, kind="stable")
    kept_idx = []
    for i in order:
        inst = instances[i]
        if all(voxel_iou(inst.points, instances[k].points, voxel_size) < overlap_threshold
               for k in kept_idx):
            kept_idx.append(i)
    kept = sorted(kept_idx)
    return [instances[i] for i in kept]


def multiview_vote(instances, cfg: PrimitiveConfig | None = None):
    """Full multi-view voting: fold views sequentially, denoising (DBSCAN)
    and suppressing redundant sets (NMS) after every aggregation step."""
    cfg = cfg if cfg is not None else PrimitiveConfig()
    sets = []
    for _, view_insts in _by_view(instances):
        _fold_instances(sets, view_insts, cfg.overlap_threshold, cfg.vote_voxel)
        denoised = []
        for s in sets:
            labels = dbscan(s.points, cfg.dbscan_eps, cfg.dbscan_min_pts)
            keep = labels >= 0
            if keep.any():
                s.points = s.points[keep]
                s._vox = None  # stale after denoising
                denoised.append(s)
        sets = nms_by_size(denoised, cfg.nms_overlap, cfg.vote_voxel)
    return sets


def majority_vote_baseline(instances, voxel_size: float = 0.01) -> LabeledVoxelGrid:
    """Per-voxel plurality label over all views; ties go to the lower class index."""
    pts = np.vstack([i.points for i in instances])
    cls = np.concatenate([np.full(i.points.shape[0], CLASS_ORDER.index(i.shape_class),
                                  dtype=np.int64) for i in instances])
    keys = np.floor(pts / voxel_size).astype(np.int64)
    kmin = keys.min(axis=0)
    shape = tuple((keys.max(axis=0) - kmin + 1).tolist())
    if int(np.prod(shape)) > 100_000_000:
        raise ValueError("voxel grid too large; increase voxel_size")
    votes = np.zeros((len(CLASS_ORDER),) + shape, dtype=np.int64)
    rel = keys - kmin
    np.add.at(votes, (cls, rel[:, 0], rel[:, 1], rel[:, 2]), 1)
    total = votes.sum(axis=0)
    labels = np.where(total > 0, votes.argmax(axis=0), -1).astype(np.int8)
    return LabeledVoxelGrid(kmin * voxel_size, voxel_size, labels, votes)


def count_label_components(grid: LabeledVoxelGrid) -> int:
    """Number of 26-connected same-label components; the baseline's
    stand-in for an instance count."""
    structure = np.ones((3, 3, 3), dtype=int)
    total = 0
    for c in range(len(CLASS_ORDER)):
        _, num = ndimage.label(grid.labels == c, structure=structure)
        total += num
    return total


# ---------------------------------------------------------------------------
# surface normals
# ---------------------------------------------------------------------------

def estimate_normals(points, k: int = 15) -> np.ndarray:
    """Unoriented per-point normals from local PCA of the k-neighborhood."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    k = min(k, n)
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k)
    nb = pts[idx]
    nb = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb)
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0]


# ---------------------------------------------------------------------------
# cylinder fit
# ---------------------------------------------------------------------------

def _radial_distance(pts, center, axis):
    rel = pts - center
    return np.linalg.norm(np.cross(rel, axis), axis=1)


def _cylinder_surface_distance(pts, center, axis, radius, height):
    """Distance to the surface of the solid cylinder (side and caps)."""
    rel = pts - center
    along = rel @ axis
    radial = np.linalg.norm(rel - along[:, None] * axis[None, :], axis=1)
    dr = radial - radius
    da = np.abs(along) - height / 2.0
    outside = np.hypot(np.clip(dr, 0.0, None), np.clip(da, 0.0, None))
    inside = -np.maximum(dr, da)
    return np.where((dr > 0) | (da > 0), outside, inside)


def _orthobasis(axis):
    e = np.zeros(3)
    e[np.argmin(np.abs(axis))] = 1.0
    u = np.cross(axis, e)
    u /= np.linalg.norm(u)
    return u, np.cross(axis, u)


def _orient_largest_positive(v):
    return -v if v[np.argmax(np.abs(v))] < 0 else v


def _quat_z_to(axis):
    z = np.array([0.0, 0.0, 1.0])
    c = np.cross(z, axis)
    w = 1.0 + float(z @ axis)
    if w < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])  # 180 deg about x
    return quat_normalize(np.array([c[0], c[1], c[2], w]))


def fit_cylinder_ransac(points, cfg: PrimitiveConfig | None = None,
                        rng_seed: int = 0) -> PrimitiveShape:
    """RANSAC cylinder fit from two-point-with-normal samples plus a
    least-squares refinement of axis, center, and radius.

    Raises:
        InsufficientPoints: fewer than ``cfg.min_points`` points.
        FitRejected: no valid hypothesis (e.g. planar data) or final
            inlier ratio below ``cfg.min_inlier_ratio``.
    """
    cfg = cfg if cfg is not None else PrimitiveConfig()
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    if n < cfg.min_points:
        raise InsufficientPoints(f"cylinder fit needs >= {cfg.min_points} points, got {n}")
    normals = estimate_normals(pts, cfg.normal_k)
    rng = np.random.default_rng(rng_seed)
    pairs = rng.integers(0, n, size=(cfg.ransac_iterations, 2))

    best = None  # (count, center, axis, radius)
    for i1, i2 in pairs:
        if i1 == i2:
            continue
        axis = np.cross(normals[i1], normals[i2])
        mag = np.linalg.norm(axis)
        if mag < 0.05:
            continue
        axis = axis / mag
        u, v = _orthobasis(axis)
        q1 = np.array([pts[i1] @ u, pts[i1] @ v])
        q2 = np.array([pts[i2] @ u, pts[i2] @ v])
        m1 = np.array([normals[i1] @ u, normals[i1] @ v])
        m2 = np.array([normals[i2] @ u, normals[i2] @ v])
        n1 = np.linalg.norm(m1)
        n2 = np.linalg.norm(m2)
        if n1 < 1e-9 or n2 < 1e-9:
            continue
        m1, m2 = m1 / n1, m2 / n2
        A = np.column_stack([m1, -m2])
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        if abs(det) < 1e-9:
            continue
        t, _ = np.linalg.solve(A, q2 - q1)
        c2 = q1 + t * m1
        r = 0.5 * (np.linalg.norm(q1 - c2) + np.linalg.norm(q2 - c2))
        if not (1e-4 < r < cfg.max_cylinder_radius):
            continue
        center = c2[0] * u + c2[1] * v
        count = int(np.count_nonzero(
            np.abs(_radial_distance(pts, center, axis) - r) <= cfg.cylinder_tol))
        if best is None or count > best[0]:
            best = (count, center, axis, r)
    if best is None:
        raise FitRejected("no cylinder hypothesis survived (degenerate surface normals)")

    _, center, axis, r = best
    # lateral-surface inliers seed the solid fit; center/height from their extent
    inliers = np.abs(_radial_distance(pts, center, axis) - r) <= cfg.cylinder_tol
    along = (pts[inliers] - center) @ axis
    height = max(float(along.max() - along.min()), 1e-4)
    center = center + axis * float(along.max() + along.min()) / 2.0

    for _ in range(2):
        sub = pts[inliers]
        if sub.shape[0] < 8:
            break
        a0, c0, u0, v0 = axis, center, *_orthobasis(axis)

        def model(x):
            a = a0 + x[3] * u0 + x[4] * v0
            a = a / np.linalg.norm(a)
            return c0 + x[0] * u0 + x[1] * v0 + x[2] * a0, a, abs(x[5]), abs(x[6])

        def resid(x):
            c, a, rr, hh = model(x)
            return _cylinder_surface_distance(sub, c, a, max(rr, 1e-6), max(hh, 1e-6))

        sol = least_squares(resid, np.array([0, 0, 0, 0, 0, r, height], dtype=np.float64),
                            method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                            max_nfev=4000)
        center, axis, r, height = model(sol.x)
        if r <= 1e-6:
            raise FitRejected("refinement collapsed the radius")
        inliers = np.abs(_cylinder_surface_distance(pts, center, axis, r, height)) \
            <= cfg.cylinder_tol

    ratio = inliers.sum() / n
    if ratio < cfg.min_inlier_ratio:
        raise FitRejected(f"cylinder inlier ratio {ratio:.2f} below {cfg.min_inlier_ratio}")

    axis = _orient_largest_positive(axis)
    proj = (pts[inliers] - center) @ axis
    height = max(float(proj.max() - proj.min()), 1e-6)
    mid = center + axis * (proj.max() + proj.min()) / 2.0
    # recount against the reported model so the published inliers satisfy
    # the distance predicate verbatim
    final = np.abs(_cylinder_surface_distance(pts, mid, axis, r, height)) <= cfg.cylinder_tol
    resid = _cylinder_surface_distance(pts[final], mid, axis, r, height)
    return PrimitiveShape(
        "cylinder", RigidPose(_quat_z_to(axis), mid), radius=float(r),
        height=height, inlier_count=int(final.sum()),
        fit_rms=float(np.sqrt(np.mean(resid ** 2))))


# ---------------------------------------------------------------------------
# cuboid fit
# ---------------------------------------------------------------------------

def _axis_rotation(i, angle_rad):
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    R = np.eye(3)
    j, k = (i + 1) % 3, (i + 2) % 3
    R[j, j], R[j, k] = c, -s
    R[k, j], R[k, k] = s, c
    return R


def _box_surface_distance(local, extents):
    """Distance from points in box coordinates to the box surface."""
    excess = np.abs(local) - extents / 2.0
    outside = np.linalg.norm(np.clip(excess, 0.0, None), axis=1)
    inside = -np.max(excess, axis=1)
    return np.where(np.all(excess <= 0, axis=1), inside, outside)


def _refine_box(sub, R0, center0, extents0):
    """Least-squares box refinement over (rotation, center, extents)."""

    def unpack(x):
        R = R0 @ matrix_from_quat(quat_from_rotvec(x[:3]))
        return R, x[3:6], np.abs(x[6:9])

    def resid(x):
        R, center, extents = unpack(x)
        return _box_surface_distance(sub @ R - center, np.maximum(extents, 1e-6))

    x0 = np.concatenate([np.zeros(3), center0, extents0])
    sol = least_squares(resid, x0, method="lm", xtol=1e-12, ftol=1e-12, gtol=1e-12,
                        max_nfev=2000)
    R, center, extents = unpack(sol.x)
    return R, center, np.maximum(extents, 1e-6)


def fit_cuboid_ransac(points, cfg: PrimitiveConfig | None = None,
                      rng_seed: int = 0) -> PrimitiveShape:
    """Oriented-box fit: surface-normal eigentriad init, minimum-volume
    local rotation sweep, and outlier-resistant quantile extents.

    Fully deterministic; ``rng_seed`` is accepted for interface symmetry
    with the cylinder fit.

    Raises:
        InsufficientPoints / FitRejected: as for the cylinder fit.
    """
    cfg = cfg if cfg is not None else PrimitiveConfig()
    del rng_seed
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = pts.shape[0]
    if n < cfg.min_points:
        raise InsufficientPoints(f"cuboid fit needs >= {cfg.min_points} points, got {n}")

    # box faces make the normal outer-product sum eigen-decompose into the
    # box axes even when only a few faces are visible
    normals = estimate_normals(pts, cfg.normal_k)
    M = np.einsum("ni,nj->ij", normals, normals)
    _, vecs = np.linalg.eigh(M)
    R = vecs[:, ::-1].copy()
    if np.linalg.det(R) < 0:
        R[:, 2] = -R[:, 2]

    lo_q, hi_q = cfg.extent_quantile, 1.0 - cfg.extent_quantile

    def volume(rot):
        q = pts @ rot
        lo = np.quantile(q, lo_q, axis=0)
        hi = np.quantile(q, hi_q, axis=0)
        return float(np.prod(np.maximum(hi - lo, 1e-9)))

    deltas = np.deg2rad(np.arange(-cfg.box_search_half_deg,
                                  cfg.box_search_half_deg + 1e-9, cfg.box_search_step_deg))
    for _ in range(2):
        for axis in range(3):
            best_R, best_vol = R, volume(R)
            for d in deltas:
                cand = R @ _axis_rotation(axis, d)
                v = volume(cand)
                if v < best_vol - 1e-15:
                    best_R, best_vol = cand, v
            R = best_R

    def box_from(selection):
        q = pts[selection] @ R
        lo = np.quantile(q, lo_q, axis=0)
        hi = np.quantile(q, hi_q, axis=0)
        center_local = (lo + hi) / 2.0
        extents = np.maximum(hi - lo, 1e-6)
        return center_local, extents

    center_local, extents = box_from(slice(None))
    dist = _box_surface_distance(pts @ R - center_local, extents)
    inliers = dist <= cfg.cuboid_tol
    if inliers.sum() >= cfg.min_points:
        center_local, extents = box_from(inliers)
        dist = _box_surface_distance(pts @ R - center_local, extents)
        inliers = dist <= cfg.cuboid_tol

    # quantile extents absorb the noise tail; a surface-distance least
    # squares pulls faces back to the centers of their point masses
    if inliers.sum() >= cfg.min_points:
        R, center_local, extents = _refine_box(pts[inliers], R, center_local, extents)
        dist = _box_surface_distance(pts @ R - center_local, extents)
        inliers = dist <= cfg.cuboid_tol

    ratio = inliers.sum() / n
    if ratio < cfg.min_inlier_ratio:
        raise FitRejected(f"cuboid inlier ratio {ratio:.2f} below {cfg.min_inlier_ratio}")

    return PrimitiveShape(
        "cuboid", RigidPose(quat_from_matrix(R), R @ center_local), extents=extents,
        inlier_count=int(inliers.sum()),
        fit_rms=float(np.sqrt(np.mean(dist[inliers] ** 2))))


# ---------------------------------------------------------------------------
# surface sampling (shared by the synthetic harness and evaluation)
# ---------------------------------------------------------------------------

def sample_primitive_surface(shape: PrimitiveShape, density: float, rng,
                             return_normals: bool = False):
    """Uniform surface samples at ``density`` points per square meter.

    Per-patch counts are deterministic (rounded area * density), so the
    total honors the density up to rounding. With ``return_normals`` the
    outward surface normal of each sample is returned as well.
    """
    rng = np.random.default_rng(rng)
    local, normals = [], []
    if shape.kind == "cuboid":
        ex, ey, ez = shape.extents
        faces = [  # (fixed axis, offset, spans)
            (0, ex / 2, ey, ez), (0, -ex / 2, ey, ez),
            (1, ey / 2, ex, ez), (1, -ey / 2, ex, ez),
            (2, ez / 2, ex, ey), (2, -ez / 2, ex, ey),
        ]
        for axis, offset, s1, s2 in faces:
            count = int(round(s1 * s2 * density))
            if count == 0:
                continue
            a = rng.uniform(-s1 / 2, s1 / 2, count)
            b = rng.uniform(-s2 / 2, s2 / 2, count)
            pts = np.empty((count, 3))
            pts[:, axis] = offset
            others = [i for i in range(3) if i != axis]
            pts[:, others[0]] = a
            pts[:, others[1]] = b
            local.append(pts)
            nrm = np.zeros((count, 3))
            nrm[:, axis] = np.sign(offset)
            normals.append(nrm)
    else:
        r, h = shape.radius, shape.height
        count = int(round(2 * np.pi * r * h * density))
        if count:
            ang = rng.uniform(0, 2 * np.pi, count)
            z = rng.uniform(-h / 2, h / 2, count)
            local.append(np.column_stack([r * np.cos(ang), r * np.sin(ang), z]))
            normals.append(np.column_stack([np.cos(ang), np.sin(ang), np.zeros(count)]))
        cap = int(round(np.pi * r * r * density))
        for sign in (1.0, -1.0):
            if cap == 0:
                continue
            ang = rng.uniform(0, 2 * np.pi, cap)
            rad = r * np.sqrt(rng.uniform(0, 1, cap))
            local.append(np.column_stack([rad * np.cos(ang), rad * np.sin(ang),
                                          np.full(cap, sign * h / 2)]))
            nrm = np.zeros((cap, 3))
            nrm[:, 2] = sign
            normals.append(nrm)
    if not local:
        pts = np.empty((0, 3))
        return (pts, pts.copy()) if return_normals else pts
    world = shape.pose.transform(np.vstack(local))
    if not return_normals:
        return world
    world_normals = quat_rotate(shape.pose.quaternion, np.vstack(normals))
    return world, world_normals
