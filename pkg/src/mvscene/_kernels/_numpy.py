"""Vectorized numpy implementations of the hot kernels.

This is the fallback backend; the compiled extension in ``_native.pyx``
implements the same contracts. ``splat_points`` must match the native
kernel bit-for-bit; ``score_candidates`` may differ only by summation
order (agreement within 1e-12 relative).
"""

import numpy as np

_MIN_DEPTH = 1e-6

BACKEND = "numpy"


def score_candidates(cand_rot, cand_t, view_rot, view_t, intrinsics, keypoints,
                     target_uv, target_ok, weights, penalty):
    """Weighted squared reprojection consensus score per candidate pose.

    For candidate c, view i, keypoint j the term is
    ``w[i,j] * |proj_i(c, k_j) - target_uv[i,j]|^2``; terms whose target is
    invalid or whose candidate projection falls behind the camera contribute
    ``w[i,j] * penalty`` instead.

    Args:
        cand_rot: (C, 3, 3) candidate rotations (object-to-world).
        cand_t: (C, 3) candidate translations.
        view_rot: (M, 3, 3) world-to-camera rotations.
        view_t: (M, 3) world-to-camera translations.
        intrinsics: (M, 4) rows of (fx, fy, cx, cy).
        keypoints: (N, 3) model keypoints.
        target_uv: (M, N, 2) reference projections.
        target_ok: (M, N) uint8/bool validity of the reference projections.
        weights: (M, N) effective per-keypoint weights.
        penalty: behind-camera penalty in px^2.

    Returns:
        (C,) float64 scores.
    """
    cand_rot = np.ascontiguousarray(cand_rot, dtype=np.float64)
    cand_t = np.ascontiguousarray(cand_t, dtype=np.float64)
    view_rot = np.ascontiguousarray(view_rot, dtype=np.float64)
    view_t = np.ascontiguousarray(view_t, dtype=np.float64)
    intr = np.ascontiguousarray(intrinsics, dtype=np.float64)
    kp = np.ascontiguousarray(keypoints, dtype=np.float64)
    ok = np.asarray(target_ok).astype(bool)
    w = np.ascontiguousarray(weights, dtype=np.float64)

    # camera-from-object transform per (candidate, view)
    M = np.einsum("mab,cbd->cmad", view_rot, cand_rot)
    v = np.einsum("mab,cb->cma", view_rot, cand_t) + view_t[None, :, :]
    X = np.einsum("cmad,nd->cmna", M, kp) + v[:, :, None, :]

    z = X[..., 2]
    in_front = z > _MIN_DEPTH
    zs = np.where(in_front, z, 1.0)
    u = intr[None, :, None, 0] * X[..., 0] / zs + intr[None, :, None, 2]
    vv = intr[None, :, None, 1] * X[..., 1] / zs + intr[None, :, None, 3]

    du = u - target_uv[None, :, :, 0]
    dv = vv - target_uv[None, :, :, 1]
    sq = du * du + dv * dv

    # sq is NaN exactly where the target is invalid; the where() below
    # replaces those (and behind-camera candidates) with the penalty.
    good = in_front & ok[None, :, :]
    term = np.where(good, sq, penalty)
    # weights of exactly zero contribute nothing, penalties included
    return np.einsum("mn,cmn->c", w, term)


def splat_points(uv, z, width, height, radius, point_ids=None):
    """Z-buffer splat of projected points onto a pixel grid.

    Each point claims all pixels whose integer center lies within
    ``radius`` of its continuous projection (``radius <= 0`` claims the
    nearest pixel only). Smaller depth wins; exact depth ties go to the
    lower point id.

    Returns:
        (depth, winner): (H, W) float64 with +inf where unhit, and
        (H, W) int32 of winning point indices (-1 where unhit).
    """
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    n = uv.shape[0]
    ids = np.arange(n, dtype=np.int64) if point_ids is None else np.asarray(point_ids, dtype=np.int64)

    depth = np.full((height, width), np.inf)
    winner = np.full((height, width), -1, dtype=np.int32)

    live = (z > _MIN_DEPTH) & np.all(np.isfinite(uv), axis=1)
    if not np.any(live):
        return depth, winner
    u, v, zz, pid = uv[live, 0], uv[live, 1], z[live], ids[live]

    if radius <= 0.0:
        xs = np.floor(u + 0.5).astype(np.int64)
        ys = np.floor(v + 0.5).astype(np.int64)
        keep = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
        flat = ys[keep] * width + xs[keep]
        cz, cid = zz[keep], pid[keep]
    else:
        r = int(np.ceil(radius))
        bx = np.floor(u).astype(np.int64)
        by = np.floor(v).astype(np.int64)
        flat_parts, z_parts, id_parts = [], [], []
        r2 = radius * radius
        for oy in range(-r, r + 2):
            for ox in range(-r, r + 2):
                xs = bx + ox
                ys = by + oy
                dx = xs - u
                dy = ys - v
                keep = (dx * dx + dy * dy <= r2) & (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
                if np.any(keep):
                    flat_parts.append(ys[keep] * width + xs[keep])
                    z_parts.append(zz[keep])
                    id_parts.append(pid[keep])
        if not flat_parts:
            return depth, winner
        flat = np.concatenate(flat_parts)
        cz = np.concatenate(z_parts)
        cid = np.concatenate(id_parts)

    order = np.lexsort((cid, cz, flat))
    flat, cz, cid = flat[order], cz[order], cid[order]
    first = np.ones(flat.shape[0], dtype=bool)
    first[1:] = flat[1:] != flat[:-1]
    depth.ravel()[flat[first]] = cz[first]
    winner.ravel()[flat[first]] = cid[first].astype(np.int32)
    return depth, winner
