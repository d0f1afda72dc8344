#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Runs both backends on identical workloads, checks they agree, and prints
a timing table. Usage: python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

from mvscene._kernels import _numpy

try:
    from mvscene._kernels import _native
except ImportError:
    _native = None


def _timeit(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def make_scoring_workload(rng, n_candidates, n_views=12, n_keypoints=9):
    def rotmats(k):
        a = rng.normal(size=(k, 3))
        out = np.empty((k, 3, 3))
        for i, v in enumerate(a):
            th = np.linalg.norm(v)
            ax = v / th
            K = np.array([[0, -ax[2], ax[1]], [ax[2], 0, -ax[0]], [-ax[1], ax[0], 0]])
            out[i] = np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * (K @ K)
        return out

    cand_rot = rotmats(n_candidates)
    cand_t = rng.normal(0, 0.1, (n_candidates, 3))
    view_rot = rotmats(n_views)
    view_t = rng.normal(0, 0.1, (n_views, 3)) + [0, 0, 1.0]
    intr = np.tile([600.0, 600.0, 320.0, 240.0], (n_views, 1))
    kp = rng.uniform(-0.08, 0.08, (n_keypoints, 3))
    target_uv = rng.uniform(0, 640, (n_views, n_keypoints, 2))
    target_ok = np.ones((n_views, n_keypoints), dtype=np.uint8)
    weights = rng.uniform(0, 1, (n_views, n_keypoints))
    return (cand_rot, cand_t, view_rot, view_t, intr, kp, target_uv, target_ok,
            weights, 1e4)


def make_splat_workload(rng, n_points, width=640, height=480):
    uv = rng.uniform([-20, -20], [width + 20, height + 20], (n_points, 2))
    z = rng.uniform(0.3, 3.0, n_points)
    return uv, z, width, height, 1.5, None


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="smaller workloads")
    args = parser.parse_args()

    if _native is None:
        print("compiled backend unavailable; build the extension first "
              "(pip install -e . --no-build-isolation)")
        return

    rng = np.random.default_rng(0)
    repeats = 3 if args.quick else 5
    scale = 0.2 if args.quick else 1.0

    rows = []
    for n_cand in (int(500 * scale) or 100, int(5000 * scale) or 1000):
        w = make_scoring_workload(rng, n_cand)
        ref = _numpy.score_candidates(*w)
        got = _native.score_candidates(*w)
        assert np.allclose(ref, got, rtol=1e-12), "backend mismatch"
        t_py = _timeit(lambda: _numpy.score_candidates(*w), repeats)
        t_nat = _timeit(lambda: _native.score_candidates(*w), repeats)
        rows.append((f"score_candidates C={n_cand} M=12 N=9", t_py, t_nat))

    for n_pts in (int(200_000 * scale) or 50_000, int(2_000_000 * scale) or 200_000):
        w = make_splat_workload(rng, n_pts)
        d_ref, w_ref = _numpy.splat_points(*w)
        d_nat, w_nat = _native.splat_points(*w)
        assert np.array_equal(d_ref, d_nat) and np.array_equal(w_ref, w_nat), \
            "backend mismatch"
        t_py = _timeit(lambda: _numpy.splat_points(*w), repeats)
        t_nat = _timeit(lambda: _native.splat_points(*w), repeats)
        rows.append((f"splat_points P={n_pts} 640x480 r=1.5", t_py, t_nat))

    name_w = max(len(r[0]) for r in rows)
    print(f"{'workload':<{name_w}}  {'numpy':>10}  {'native':>10}  {'speedup':>8}")
    for name, t_py, t_nat in rows:
        print(f"{name:<{name_w}}  {t_py * 1e3:>8.2f}ms  {t_nat * 1e3:>8.2f}ms  "
              f"{t_py / t_nat:>7.1f}x")


if __name__ == "__main__":
    main()
