"""Point-cloud cleanup and virtual depth-map rendering/refinement.

Turns a reconstructed tabletop cloud into clean per-view depth rasters:
statistical denoising, RANSAC table-plane estimation, double-threshold
table replacement, z-buffered splat rendering, and a refinement chain of
connectivity filtering, temporal agreement averaging, median filtering,
and analytic plane fill for the remaining holes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .errors import InsufficientPoints
from .geometry import CameraIntrinsics, RigidPose, invert
from . import _kernels

_MIN_DEPTH = 1e-6


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PointCloud:
    """3D points with optional per-point color / source view / timestamp."""

    points: np.ndarray
    colors: np.ndarray | None = None
    source_view: np.ndarray | None = None
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        self.points = pts
        n = pts.shape[0]
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if self.colors.shape[0] != n:
                raise ValueError("colors length mismatch")
        if self.source_view is not None:
            self.source_view = np.asarray(self.source_view, dtype=np.int64).reshape(-1)
            if self.source_view.shape[0] != n:
                raise ValueError("source_view length mismatch")
        if self.timestamps is not None:
            self.timestamps = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
            if self.timestamps.shape[0] != n:
                raise ValueError("timestamps length mismatch")

    def __len__(self):
        return self.points.shape[0]

    def subset(self, index) -> "PointCloud":
        return PointCloud(
            self.points[index],
            None if self.colors is None else self.colors[index],
            None if self.source_view is None else self.source_view[index],
            None if self.timestamps is None else self.timestamps[index],
        )


@dataclass(frozen=True, eq=False)
class Plane:
    """Plane {x : normal . x + offset = 0} with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        nn = np.linalg.norm(n)
        if nn < 1e-12:
            raise ValueError("plane normal must be nonzero")
        n = n / nn
        n.flags.writeable = False
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset) / nn)

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64).reshape(-1, 3) @ self.normal + self.offset


@dataclass(eq=False)
class DepthMap:
    """Depth raster in meters with an explicit validity mask (no sentinels)."""

    width: int
    height: int
    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64).reshape(self.height, self.width)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(self.height, self.width)
        if np.any(self.depth[self.valid] <= 0):
            raise ValueError("valid depths must be positive")


@dataclass
class DepthConfig:
    denoise_k: int = 16
    denoise_std_ratio: float = 2.0
    plane_inlier_threshold: float = 0.003
    plane_iterations: int = 200
    band_low: float = 0.01
    band_high: float = 0.005
    grid_spacing: float = 0.002
    splat_radius_px: float = 1.0
    min_region: int = 50
    region_depth_tol: float = 0.01
    temporal_window: int = 2
    temporal_agree_tol: float = 0.01


# ---------------------------------------------------------------------------
# cloud cleanup
# ---------------------------------------------------------------------------

def denoise_cloud(cloud: PointCloud, k_neighbors: int = 16, std_ratio: float = 2.0) -> PointCloud:
    """Statistical outlier removal by mean k-NN distance."""
    n = len(cloud)
    if n == 0:
        raise ValueError("cannot denoise an empty cloud")
    if not np.isfinite(std_ratio):
        return cloud.subset(np.arange(n))
    k = min(k_neighbors, n - 1)
    if k < 1:
        return cloud.subset(np.arange(n))
    tree = cKDTree(cloud.points)
    dists, _ = tree.query(cloud.points, k=k + 1)
    mean_knn = dists[:, 1:].mean(axis=1)
    cut = mean_knn.mean() + std_ratio * mean_knn.std()
    return cloud.subset(mean_knn <= cut)


def fit_plane_ransac(cloud: PointCloud, inlier_threshold: float = 0.003,
                     iterations: int = 200, rng_seed: int = 0, camera_centers=None):
    """RANSAC plane fit followed by a least-squares refit on the inliers.

    The refit is kept only if it does not lose inliers. The normal is
    oriented toward the mean camera side when camera centers are given,
    otherwise so that its largest-magnitude component is positive.

    Returns:
        (Plane, inlier_indices)

    Raises:
        InsufficientPoints: fewer than 3 points, or every minimal sample
            was degenerate (e.g. collinear input).
    """
    pts = cloud.points
    n = pts.shape[0]
    if n < 3:
        raise InsufficientPoints("plane fitting needs at least 3 points")
    rng = np.random.default_rng(rng_seed)
    triples = rng.integers(0, n, size=(iterations, 3))

    best = None  # (count, trial_idx, normal, offset)
    for trial, (a, b, c) in enumerate(triples):
        if a == b or b == c or a == c:
            continue
        e1 = pts[b] - pts[a]
        e2 = pts[c] - pts[a]
        nrm = np.cross(e1, e2)
        mag = np.linalg.norm(nrm)
        if mag <= 1e-9 * (np.linalg.norm(e1) * np.linalg.norm(e2) + 1e-300):
            continue
        nrm = nrm / mag
        off = -float(nrm @ pts[a])
        count = int(np.count_nonzero(np.abs(pts @ nrm + off) <= inlier_threshold))
        if best is None or count > best[0]:
            best = (count, trial, nrm, off)
    if best is None:
        raise InsufficientPoints("all RANSAC samples were degenerate (collinear points?)")

    count, _, nrm, off = best
    inliers = np.abs(pts @ nrm + off) <= inlier_threshold

    # least-squares refit; keep only if the inlier count does not drop
    sub = pts[inliers]
    centroid = sub.mean(axis=0)
    _, _, vt = np.linalg.svd(sub - centroid, full_matrices=False)
    n2 = vt[2]
    off2 = -float(n2 @ centroid)
    inliers2 = np.abs(pts @ n2 + off2) <= inlier_threshold
    if int(inliers2.sum()) >= count:
        nrm, off, inliers = n2, off2, inliers2

    if camera_centers is not None:
        centers = np.asarray(camera_centers, dtype=np.float64).reshape(-1, 3)
        if float(np.mean(centers @ nrm + off)) < 0:
            nrm, off = -nrm, -off
    elif nrm[np.argmax(np.abs(nrm))] < 0:
        nrm, off = -nrm, -off

    return Plane(nrm, off), np.where(inliers)[0]


def _plane_basis(plane: Plane):
    n = plane.normal
    e = np.zeros(3)
    e[np.argmin(np.abs(n))] = 1.0
    u = np.cross(n, e)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v


def remove_replace_tabletop(cloud: PointCloud, plane: Plane, band_low: float = 0.01,
                            band_high: float = 0.005, grid_spacing: float = 0.002) -> PointCloud:
    """Double-threshold tabletop replacement.

    Points with signed plane distance below ``band_high`` are removed
    (this covers the [-band_low, band_high] table band and everything
    under the table); a uniform synthetic grid of exact plane points is
    re-inserted over the convex-hull footprint of the removed points.
    """
    s = plane.signed_distance(cloud.points)
    keep = s > band_high
    removed = cloud.points[~keep]
    kept = cloud.subset(keep)

    if removed.shape[0] < 3:
        return kept

    u, v = _plane_basis(plane)
    origin = -plane.offset * plane.normal
    uv = (removed - origin) @ np.column_stack([u, v])
    try:
        hull = ConvexHull(uv)
    except QhullError:
        return kept

    lo = uv.min(axis=0)
    hi = uv.max(axis=0)
    gx = np.arange(lo[0], hi[0] + grid_spacing, grid_spacing)
    gy = np.arange(lo[1], hi[1] + grid_spacing, grid_spacing)
    gu, gv = np.meshgrid(gx, gy)
    grid2d = np.column_stack([gu.ravel(), gv.ravel()])
    letters = hull.equations  # rows (A, B, C): inside iff A*x + B*y + C <= 0
    inside = np.all(grid2d @ letters[:, :2].T + letters[:, 2] <= 1e-12, axis=1)
    grid2d = grid2d[inside]
    grid3d = origin + grid2d[:, :1] * u + grid2d[:, 1:2] * v

    points = np.vstack([kept.points, grid3d])
    colors = None
    if kept.colors is not None:
        colors = np.vstack([kept.colors, np.full((grid3d.shape[0], 3), 128, dtype=np.uint8)])
    source = None
    if kept.source_view is not None:
        source = np.concatenate([kept.source_view, np.full(grid3d.shape[0], -1, dtype=np.int64)])
    stamps = None
    if kept.timestamps is not None:
        stamps = np.concatenate([kept.timestamps, np.zeros(grid3d.shape[0])])
    return PointCloud(points, colors, source, stamps)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def splat_cloud(points, camera_pose: RigidPose, K: CameraIntrinsics,
                splat_radius_px: float = 1.0, point_ids=None):
    """Project points into the camera and z-buffer splat them.

    Returns:
        (DepthMap, winner): winner holds the index of the point that owns
        each pixel (-1 where unhit).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    w2c = invert(camera_pose)
    cam = w2c.transform(pts) if pts.size else pts
    z = cam[:, 2] if pts.size else np.empty(0)
    with np.errstate(divide="ignore", invalid="ignore"):
        zs = np.where(z > _MIN_DEPTH, z, 1.0)
        uv = np.column_stack([K.fx * cam[:, 0] / zs + K.cx,
                              K.fy * cam[:, 1] / zs + K.cy]) if pts.size else np.empty((0, 2))
    depth, winner = _kernels.splat_points(uv, z, K.width, K.height, splat_radius_px, point_ids)
    return DepthMap(K.width, K.height, np.where(np.isfinite(depth), depth, np.inf),
                    np.isfinite(depth)), winner


def render_virtual_depth(cloud: PointCloud, camera_pose: RigidPose, K: CameraIntrinsics,
                         splat_radius_px: float = 1.0) -> DepthMap:
    """Z-buffered splat of the cloud; unhit pixels are flagged invalid."""
    dm, _ = splat_cloud(cloud.points, camera_pose, K, splat_radius_px)
    return dm


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------

def _drop_small_regions(dm: DepthMap, min_region: int, depth_tol: float) -> DepthMap:
    """Remove valid 4-connected components (depth-similar edges) below min size."""
    valid = dm.valid
    if not valid.any() or min_region <= 1:
        return DepthMap(dm.width, dm.height, dm.depth.copy(), valid.copy())
    h, w = valid.shape
    flat_ids = -np.ones(valid.shape, dtype=np.int64)
    flat_ids[valid] = np.arange(int(valid.sum()))
    rows, cols = [], []
    for dy, dx in ((0, 1), (1, 0)):
        a_val = valid[: h - dy, : w - dx]
        b_val = valid[dy:, dx:]
        both = a_val & b_val
        close = np.zeros_like(both)
        close[both] = np.abs(dm.depth[: h - dy, : w - dx][both] - dm.depth[dy:, dx:][both]) <= depth_tol
        rows.append(flat_ids[: h - dy, : w - dx][close])
        cols.append(flat_ids[dy:, dx:][close])
    nv = int(valid.sum())
    graph = coo_matrix((np.ones(sum(len(r) for r in rows)),
                        (np.concatenate(rows), np.concatenate(cols))), shape=(nv, nv))
    _, labels = connected_components(graph, directed=False)
    sizes = np.bincount(labels)
    keep_label = sizes >= min_region
    new_valid = valid.copy()
    new_valid[valid] = keep_label[labels]
    depth = dm.depth.copy()
    depth[~new_valid] = np.inf
    return DepthMap(dm.width, dm.height, depth, new_valid)


def _warp_map(src: DepthMap, src_pose: RigidPose, dst_pose: RigidPose,
              K: CameraIntrinsics) -> DepthMap:
    """Reproject a depth map into another camera (nearest-pixel z-buffer)."""
    ys, xs = np.nonzero(src.valid)
    if ys.size == 0:
        return DepthMap(K.width, K.height, np.full((K.height, K.width), np.inf),
                        np.zeros((K.height, K.width), dtype=bool))
    z = src.depth[ys, xs]
    cam = np.column_stack([(xs - K.cx) / K.fx * z, (ys - K.cy) / K.fy * z, z])
    world = src_pose.transform(cam)
    dm, _ = splat_cloud(world, dst_pose, K, splat_radius_px=0.0)
    return dm


def plane_fill_depth(plane: Plane, camera_pose: RigidPose, K: CameraIntrinsics) -> DepthMap:
    """Analytic ray-plane depth for every pixel (invalid where the ray misses)."""
    xs, ys = np.meshgrid(np.arange(K.width), np.arange(K.height))
    dirs = np.stack([(xs - K.cx) / K.fx, (ys - K.cy) / K.fy, np.ones_like(xs, dtype=np.float64)],
                    axis=-1).reshape(-1, 3)
    R = camera_pose.rotation_matrix()
    c = camera_pose.translation
    denom = dirs @ (R.T @ plane.normal)
    num = -(plane.normal @ c + plane.offset)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num / denom
    good = np.isfinite(t) & (t > _MIN_DEPTH) & (np.abs(denom) > 1e-12)
    depth = np.where(good, t, np.inf).reshape(K.height, K.width)
    return DepthMap(K.width, K.height, depth, good.reshape(K.height, K.width))


def refine_depth_sequence(maps, plane: Plane, K: CameraIntrinsics, poses,
                          reference: int = 0, min_region: int = 50,
                          region_depth_tol: float = 0.01, temporal_window: int = 2,
                          agree_tol: float = 0.01) -> DepthMap:
    """Refine one view's depth map using its temporal neighbors.

    Chain: (a) drop small depth-connected regions, (b) average values that
    agree across the reference and the warped neighbor maps (>= 2 within
    ``agree_tol`` of their per-pixel median), (c) 3x3 median over pixels
    with a fully valid neighborhood, (d) fill remaining holes with the
    analytic ray-plane depth.
    """
    if not maps:
        raise ValueError("need at least one depth map")
    if len(maps) != len(poses):
        raise ValueError("maps and poses must align")
    ref = _drop_small_regions(maps[reference], min_region, region_depth_tol)

    stack = [np.where(ref.valid, ref.depth, np.nan)]
    for i, (m, p) in enumerate(zip(maps, poses)):
        if i == reference or abs(i - reference) > temporal_window:
            continue
        wm = _warp_map(m, p, poses[reference], K)
        stack.append(np.where(wm.valid, wm.depth, np.nan))
    arr = np.stack(stack)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        med = np.nanmedian(arr, axis=0)
    sel = np.zeros(arr.shape, dtype=bool)
    finite = np.isfinite(arr)
    sel[finite] = np.abs(arr[finite] - np.broadcast_to(med, arr.shape)[finite]) <= agree_tol
    cnt = sel.sum(axis=0)
    ssum = np.where(sel, arr, 0.0).sum(axis=0)
    agreed = cnt >= 2
    depth = np.where(agreed, ssum / np.maximum(cnt, 1), np.where(ref.valid, ref.depth, np.inf))
    valid = agreed | ref.valid

    # 3x3 median, only where the whole neighborhood is valid
    if K.height >= 3 and K.width >= 3:
        windows = np.stack([depth[dy:K.height - 2 + dy, dx:K.width - 2 + dx]
                            for dy in range(3) for dx in range(3)])
        wvalid = np.stack([valid[dy:K.height - 2 + dy, dx:K.width - 2 + dx]
                           for dy in range(3) for dx in range(3)])
        full = wvalid.all(axis=0)
        med9 = np.median(windows, axis=0)
        interior = depth[1:-1, 1:-1]
        depth[1:-1, 1:-1] = np.where(full, med9, interior)

    fill = plane_fill_depth(plane, poses[reference], K)
    hole = ~valid & fill.valid
    depth = np.where(hole, fill.depth, depth)
    valid = valid | hole
    depth = np.where(valid, depth, np.inf)
    return DepthMap(K.width, K.height, depth, valid)
