"""Command-line pipeline driver.

Subcommands: ``synth``, ``refine-depth``, ``fit-primitives``,
``fuse-poses``, ``evaluate``. Exit codes: 0 success, 1 usage error,
2 data error, 3 internal error. All logging goes to standard error;
outputs are JSON / PLY / CSV files under ``--output-dir``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import fileio
from .config import PipelineConfig, load_pipeline_config
from .depthmap import denoise_cloud, fit_plane_ransac, refine_depth_sequence, \
    remove_replace_tabletop, render_virtual_depth
from .errors import EmptyUnprojection, FitRejected, InsufficientPoints, MVSceneError
from .fusion import fuse_object_poses
from .metrics import (accuracy_curve, add_metric, add_s_metric, assign_predictions,
                      detection_rate, f_score, filter_gt_vertices)
from .primitives import (SegmentationInstance, fit_cuboid_ransac, fit_cylinder_ransac,
                         multiview_vote, sample_primitive_surface, unproject_instance)
from .synth import DetectionNoise, generate_scene, render_detections, \
    render_instance_masks, sample_labeled_cloud

logger = logging.getLogger("mvscene")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(path) -> PipelineConfig:
    return load_pipeline_config(path) if path else PipelineConfig()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> None:
    cfg = _load_config(args.config)
    scfg = cfg.synth
    if args.objects is not None:
        scfg.n_objects_min = scfg.n_objects_max = args.objects
    if args.cameras is not None:
        scfg.n_cameras = args.cameras

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    scene = generate_scene(scfg, args.seed)
    noise = DetectionNoise(pixel_sigma=args.pixel_sigma, dropout_prob=args.dropout)
    detections = render_detections(scene, noise, np.random.SeedSequence((args.seed, 1)))
    cloud, labels = sample_labeled_cloud(scene, args.cloud_density, args.cloud_noise,
                                         visibility=False,
                                         seed=np.random.SeedSequence((args.seed, 2)))
    gt_cloud, _ = sample_labeled_cloud(scene, args.cloud_density, 0.0, visibility=False,
                                       seed=np.random.SeedSequence((args.seed, 3)))
    masks = render_instance_masks(scene, cloud, labels)

    fileio.save_scene(out / "scene.json", scene)
    fileio.save_detections(out / "detections.json", detections)
    fileio.save_ply(out / "cloud.ply", cloud, binary=True)
    fileio.save_ply(out / "gt_cloud.ply", gt_cloud, binary=True)
    fileio.save_masks(out / "masks.npz", masks)
    logger.info("synth: %d objects, %d cameras, %d detections, %d cloud points",
                len(scene.objects), len(scene.cameras), len(detections), len(cloud))


def cmd_refine_depth(args) -> None:
    cfg = _load_config(args.config).depth
    scene = fileio.load_scene(args.scene)
    cloud = fileio.load_ply(args.cloud)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    cloud = denoise_cloud(cloud, cfg.denoise_k, cfg.denoise_std_ratio)
    centers = [c.pose.translation for c in scene.cameras]
    plane, inliers = fit_plane_ransac(cloud, cfg.plane_inlier_threshold,
                                      cfg.plane_iterations, args.seed, centers)
    logger.info("refine-depth: plane normal %s, %d inliers", plane.normal, len(inliers))
    cloud = remove_replace_tabletop(cloud, plane, cfg.band_low, cfg.band_high,
                                    cfg.grid_spacing)

    raw_maps = [render_virtual_depth(cloud, cam.pose, cam.intrinsics, cfg.splat_radius_px)
                for cam in scene.cameras]
    poses = [cam.pose for cam in scene.cameras]
    K = scene.cameras[0].intrinsics
    ext = "png" if args.depth_format == "png" else "npz"
    for i in range(len(raw_maps)):
        refined = refine_depth_sequence(raw_maps, plane, K, poses, reference=i,
                                        min_region=cfg.min_region,
                                        region_depth_tol=cfg.region_depth_tol,
                                        temporal_window=cfg.temporal_window,
                                        agree_tol=cfg.temporal_agree_tol)
        fileio.save_depth(out / f"depth_{i:03d}.{ext}", refined)
    fileio.save_json(out / "plane.json", {
        "normal": [float(v) for v in plane.normal], "offset": float(plane.offset)})


def cmd_fit_primitives(args) -> None:
    cfg = _load_config(args.config).primitives
    scene = fileio.load_scene(args.scene)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    masks = fileio.load_masks(args.masks)
    if len(masks) != len(scene.cameras):
        raise MVSceneError(f"{len(masks)} masks for {len(scene.cameras)} cameras")
    kinds = [p.kind for p in scene.primitives]

    instances = []
    for i, (cam, raster) in enumerate(zip(scene.cameras, masks)):
        stem = Path(args.depth) / f"depth_{i:03d}"
        depth_path = stem.with_suffix(".npz")
        if not depth_path.exists():
            depth_path = stem.with_suffix(".png")
        depth = fileio.load_depth(depth_path)
        for label in np.unique(raster):
            if label == 0:
                continue
            kind = kinds[label - 1] if label - 1 < len(kinds) else "cuboid"
            inst = SegmentationInstance(i, kind, mask=(raster == label))
            try:
                pts = unproject_instance(inst, depth, cam.pose, cam.intrinsics)
            except EmptyUnprojection:
                continue
            inst.points = pts
            instances.append(inst)

    sets = multiview_vote(instances, cfg)
    shapes, counts = [], []
    for k, s in enumerate(sets):
        try:
            if s.label == "cylinder":
                shape = fit_cylinder_ransac(s.points, cfg, rng_seed=args.seed + k)
            else:
                shape = fit_cuboid_ransac(s.points, cfg, rng_seed=args.seed + k)
        except (FitRejected, InsufficientPoints) as exc:
            logger.warning("fit-primitives: set %d rejected: %s", k, exc)
            continue
        shapes.append(shape)
        counts.append(s.points.shape[0])
    fileio.save_primitives(out / "primitives.json", shapes, counts)
    logger.info("fit-primitives: %d sets voted, %d shapes fitted", len(sets), len(shapes))


def cmd_fuse_poses(args) -> None:
    cfg = _load_config(args.config).fusion
    models = fileio.load_object_models(args.models)
    detections = fileio.load_detections(args.detections)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    by_class = {}
    for d in detections:
        by_class.setdefault(d.class_id, []).append(d)

    estimates = {}
    for class_id in sorted(by_class):
        if class_id not in models:
            logger.warning("fuse-poses: no model for class %s; skipping", class_id)
            continue
        estimates[class_id] = fuse_object_poses(by_class[class_id], models[class_id],
                                                cfg, rng_seed=args.seed)
    fileio.save_estimates(out / "estimates.json", estimates)
    n = sum(len(v) for v in estimates.values())
    logger.info("fuse-poses: %d instances across %d classes", n, len(estimates))


def cmd_evaluate(args) -> None:
    mcfg = _load_config(args.config).metrics
    scene = fileio.load_scene(args.scene)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"version": "1"}

    # --- object pose errors ---------------------------------------------
    estimates = fileio.load_estimates(args.estimates)
    by_class = {}
    for class_id, est in estimates:
        by_class.setdefault(class_id, []).append(est)

    per_object = []
    errors = []
    n_fp = 0
    for gt_index, obj in enumerate(scene.objects):
        model = obj.model
        preds = by_class.get(model.class_id, [])
        record = {"class_id": model.class_id, "gt_index": gt_index,
                  "metric": "add-s" if model.symmetric else "add",
                  "matched": False, "error": None}
        if preds:
            gts_same = [o for o in scene.objects if o.model.class_id == model.class_id]
            assign = assign_predictions(
                [e.pose.translation for e in preds],
                [o.pose.translation for o in gts_same])
            local_gt = gts_same.index(obj)
            match = next((p for p, g in assign.matches if g == local_gt), None)
            if match is not None:
                est = preds[match]
                fn = add_s_metric if model.symmetric else add_metric
                err = fn(est.pose, obj.pose, model.mesh_vertices)
                record.update(matched=True, error=err)
        errors.append(record["error"] if record["error"] is not None else np.inf)
        per_object.append(record)
    for class_id, preds in by_class.items():
        gts_same = [o for o in scene.objects if o.model.class_id == class_id]
        if not gts_same:
            n_fp += len(preds)
            continue
        assign = assign_predictions([e.pose.translation for e in preds],
                                    [o.pose.translation for o in gts_same])
        n_fp += len(assign.false_positives)

    curve = accuracy_curve(errors, mcfg.curve_max_threshold, mcfg.curve_steps)
    report["poses"] = {
        "per_object": per_object,
        "false_positives": n_fp,
        "auc": curve.auc,
        "mean_error": float(np.mean([e for e in errors if np.isfinite(e)]))
        if any(np.isfinite(e) for e in errors) else None,
    }
    with open(out / "curve.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold_m", "accuracy"])
        for t, a in zip(curve.thresholds, curve.accuracies):
            writer.writerow([repr(float(t)), repr(float(a))])

    # --- primitive coverage ----------------------------------------------
    if args.primitives:
        fitted = fileio.load_primitives(args.primitives)
        gt_sets = [sample_primitive_surface(p, mcfg.eval_surface_density,
                                            np.random.SeedSequence((911, i)))
                   for i, p in enumerate(scene.primitives)]
        out_sets = [sample_primitive_surface(p, mcfg.eval_surface_density,
                                             np.random.SeedSequence((912, i)))
                    for i, p in enumerate(fitted)]
        rate = detection_rate(out_sets, gt_sets, mcfg.coverage_fraction,
                              mcfg.coverage_tolerance)
        report["primitives"] = {"detection_rate": rate, "n_fitted": len(fitted),
                                "n_ground_truth": len(scene.primitives)}
        if args.cloud and fitted:
            # shape accuracy: nearest-GT assignment, symmetric distance over
            # GT surface points kept near the reconstructed cloud
            cloud_pts = fileio.load_ply(args.cloud).points
            assign = assign_predictions([p.pose.translation for p in fitted],
                                        [p.pose.translation for p in scene.primitives])
            shape_errors = []
            for pred_i, gt_i in assign.matches:
                visible = filter_gt_vertices(gt_sets[gt_i], cloud_pts,
                                             mcfg.gt_filter_epsilon)
                if visible.shape[0] == 0:
                    continue
                d, _ = cKDTree(out_sets[pred_i]).query(visible)
                shape_errors.append(float(d.mean()))
            report["primitives"]["shape_errors"] = shape_errors
            report["primitives"]["false_positives"] = len(assign.false_positives)
            report["primitives"]["false_negatives"] = len(assign.false_negatives)

    # --- reconstruction F-score -------------------------------------------
    if args.cloud and args.gt_cloud:
        rec = fileio.load_ply(args.cloud)
        gt = fileio.load_ply(args.gt_cloud)
        p, r, f = f_score(rec.points, gt.points, mcfg.fscore_threshold)
        report["fscore"] = {"precision": p, "recall": r, "f": f,
                            "threshold": mcfg.fscore_threshold}

    fileio.save_json(out / "report.json", report)
    logger.info("evaluate: AUC %.4f%s", curve.auc,
                f", detection rate {report['primitives']['detection_rate']:.3f}"
                if "primitives" in report else "")


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="mvscene",
                     description="Multi-view tabletop scene understanding pipeline")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--output-dir", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene with all inputs")
    common(p)
    p.add_argument("--objects", type=int, default=None, help="exact object count")
    p.add_argument("--cameras", type=int, default=None)
    p.add_argument("--pixel-sigma", type=float, default=2.0)
    p.add_argument("--dropout", type=float, default=0.05)
    p.add_argument("--cloud-density", type=float, default=200000.0)
    p.add_argument("--cloud-noise", type=float, default=0.001)

    p = sub.add_parser("refine-depth", help="plane fit, table replacement, depth rendering")
    common(p)
    p.add_argument("--cloud", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--depth-format", choices=("npz", "png"), default="npz",
                   help="raw float grid or 16-bit millimeter raster")

    p = sub.add_parser("fit-primitives", help="multi-view voting and shape fitting")
    common(p)
    p.add_argument("--masks", required=True)
    p.add_argument("--depth", required=True, help="directory with per-view depth files")
    p.add_argument("--scene", required=True)

    p = sub.add_parser("fuse-poses", help="multi-view object pose fusion")
    common(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--models", required=True, help="scene/models JSON with object models")

    p = sub.add_parser("evaluate", help="metrics report from pipeline outputs")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--estimates", required=True)
    p.add_argument("--primitives", default=None)
    p.add_argument("--cloud", default=None)
    p.add_argument("--gt-cloud", default=None)
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "refine-depth": cmd_refine_depth,
    "fit-primitives": cmd_fit_primitives,
    "fuse-poses": cmd_fuse_poses,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help exits 0 through here
        return 0 if exc.code in (0, None) else 1

    try:
        _COMMANDS[args.command](args)
    except (MVSceneError, FileNotFoundError, NotADirectoryError, PermissionError) as exc:
        logger.error("%s", exc)
        return 2
    except Exception:  # noqa: BLE001 - anything else is an internal error
        logger.exception("internal error")
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
