# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: candidate scoring and depth splatting.

Contracts match ``_numpy.py``; see that module for argument docs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, floor, isfinite

cnp.import_array()

DEF MIN_DEPTH = 1e-6

BACKEND = "native"


def score_candidates(cand_rot, cand_t, view_rot, view_t, intrinsics, keypoints,
                     target_uv, target_ok, weights, double penalty):
    cdef const double[:, :, ::1] cR = np.ascontiguousarray(cand_rot, dtype=np.float64)
    cdef const double[:, ::1] ct = np.ascontiguousarray(cand_t, dtype=np.float64)
    cdef const double[:, :, ::1] vR = np.ascontiguousarray(view_rot, dtype=np.float64)
    cdef const double[:, ::1] vt = np.ascontiguousarray(view_t, dtype=np.float64)
    cdef const double[:, ::1] intr = np.ascontiguousarray(intrinsics, dtype=np.float64)
    cdef const double[:, ::1] kp = np.ascontiguousarray(keypoints, dtype=np.float64)
    cdef const double[:, :, ::1] tgt = np.ascontiguousarray(target_uv, dtype=np.float64)
    cdef const cnp.uint8_t[:, ::1] ok = np.ascontiguousarray(target_ok, dtype=np.uint8)
    cdef const double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)

    cdef Py_ssize_t C = cR.shape[0], M = vR.shape[0], N = kp.shape[0]
    out_arr = np.zeros(C, dtype=np.float64)
    cdef double[::1] out = out_arr

    cdef Py_ssize_t c, i, j, a, b
    cdef double m00, m01, m02, m10, m11, m12, m20, m21, m22
    cdef double px, py, pz, x, y, z, u, v, du, dv, acc, wij
    cdef double fx, fy, ucx, ucy

    for c in range(C):
        acc = 0.0
        for i in range(M):
            # camera-from-object = view_rot @ cand_rot | view_rot @ cand_t + view_t
            m00 = vR[i, 0, 0] * cR[c, 0, 0] + vR[i, 0, 1] * cR[c, 1, 0] + vR[i, 0, 2] * cR[c, 2, 0]
            m01 = vR[i, 0, 0] * cR[c, 0, 1] + vR[i, 0, 1] * cR[c, 1, 1] + vR[i, 0, 2] * cR[c, 2, 1]
            m02 = vR[i, 0, 0] * cR[c, 0, 2] + vR[i, 0, 1] * cR[c, 1, 2] + vR[i, 0, 2] * cR[c, 2, 2]
            m10 = vR[i, 1, 0] * cR[c, 0, 0] + vR[i, 1, 1] * cR[c, 1, 0] + vR[i, 1, 2] * cR[c, 2, 0]
            m11 = vR[i, 1, 0] * cR[c, 0, 1] + vR[i, 1, 1] * cR[c, 1, 1] + vR[i, 1, 2] * cR[c, 2, 1]
            m12 = vR[i, 1, 0] * cR[c, 0, 2] + vR[i, 1, 1] * cR[c, 1, 2] + vR[i, 1, 2] * cR[c, 2, 2]
            m20 = vR[i, 2, 0] * cR[c, 0, 0] + vR[i, 2, 1] * cR[c, 1, 0] + vR[i, 2, 2] * cR[c, 2, 0]
            m21 = vR[i, 2, 0] * cR[c, 0, 1] + vR[i, 2, 1] * cR[c, 1, 1] + vR[i, 2, 2] * cR[c, 2, 1]
            m22 = vR[i, 2, 0] * cR[c, 0, 2] + vR[i, 2, 1] * cR[c, 1, 2] + vR[i, 2, 2] * cR[c, 2, 2]
            px = vR[i, 0, 0] * ct[c, 0] + vR[i, 0, 1] * ct[c, 1] + vR[i, 0, 2] * ct[c, 2] + vt[i, 0]
            py = vR[i, 1, 0] * ct[c, 0] + vR[i, 1, 1] * ct[c, 1] + vR[i, 1, 2] * ct[c, 2] + vt[i, 1]
            pz = vR[i, 2, 0] * ct[c, 0] + vR[i, 2, 1] * ct[c, 1] + vR[i, 2, 2] * ct[c, 2] + vt[i, 2]
            fx = intr[i, 0]
            fy = intr[i, 1]
            ucx = intr[i, 2]
            ucy = intr[i, 3]
            for j in range(N):
                wij = w[i, j]
                if wij == 0.0:
                    continue
                if not ok[i, j]:
                    acc += wij * penalty
                    continue
                x = m00 * kp[j, 0] + m01 * kp[j, 1] + m02 * kp[j, 2] + px
                y = m10 * kp[j, 0] + m11 * kp[j, 1] + m12 * kp[j, 2] + py
                z = m20 * kp[j, 0] + m21 * kp[j, 1] + m22 * kp[j, 2] + pz
                if z <= MIN_DEPTH:
                    acc += wij * penalty
                    continue
                u = fx * x / z + ucx
                v = fy * y / z + ucy
                du = u - tgt[i, j, 0]
                dv = v - tgt[i, j, 1]
                acc += wij * (du * du + dv * dv)
        out[c] = acc
    return out_arr


def splat_points(uv, z, int width, int height, double radius, point_ids=None):
    cdef const double[:, ::1] puv = np.ascontiguousarray(uv, dtype=np.float64).reshape(-1, 2)
    cdef const double[::1] pz = np.ascontiguousarray(z, dtype=np.float64).reshape(-1)
    cdef Py_ssize_t n = puv.shape[0]
    if point_ids is None:
        ids_arr = np.arange(n, dtype=np.int64)
    else:
        ids_arr = np.ascontiguousarray(point_ids, dtype=np.int64)
    cdef const cnp.int64_t[::1] ids = ids_arr

    depth_arr = np.full((height, width), np.inf)
    winner_arr = np.full((height, width), -1, dtype=np.int32)
    cdef double[:, ::1] depth = depth_arr
    cdef cnp.int32_t[:, ::1] winner = winner_arr

    cdef Py_ssize_t p
    cdef long xi, yi, x0, x1, y0, y1
    cdef double u, v, zz, dx, dy, r2, best
    cdef cnp.int64_t pid
    r2 = radius * radius

    for p in range(n):
        zz = pz[p]
        u = puv[p, 0]
        v = puv[p, 1]
        if zz <= MIN_DEPTH or not (isfinite(u) and isfinite(v)):
            continue
        pid = ids[p]
        if radius <= 0.0:
            xi = <long>floor(u + 0.5)
            yi = <long>floor(v + 0.5)
            if 0 <= xi < width and 0 <= yi < height:
                best = depth[yi, xi]
                if zz < best or (zz == best and pid < winner[yi, xi]):
                    depth[yi, xi] = zz
                    winner[yi, xi] = <cnp.int32_t>pid
            continue
        x0 = <long>ceil(u - radius)
        x1 = <long>floor(u + radius)
        y0 = <long>ceil(v - radius)
        y1 = <long>floor(v + radius)
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 >= width:
            x1 = width - 1
        if y1 >= height:
            y1 = height - 1
        for yi in range(y0, y1 + 1):
            dy = yi - v
            for xi in range(x0, x1 + 1):
                dx = xi - u
                if dx * dx + dy * dy <= r2:
                    best = depth[yi, xi]
                    if zz < best or (zz == best and pid < winner[yi, xi]):
                        depth[yi, xi] = zz
                        winner[yi, xi] = <cnp.int32_t>pid
    return depth_arr, winner_arr
