"""File formats: PLY clouds, JSON records, depth rasters, mask stacks.

Poses are serialized as scalar-first quaternions ``[w, x, y, z]`` plus a
translation (the in-memory convention is scalar-last); rotation matrices
are rejected on input to avoid orthonormality drift. JSON files are
written with sorted keys and no timestamps, so identical inputs produce
byte-identical outputs.
"""

from __future__ import annotations

import json

import numpy as np
from PIL import Image

from .depthmap import DepthMap, Plane, PointCloud
from .errors import ParseError
from .fusion import DetectionWeights, FusedEstimate, ViewDetection
from .geometry import Camera, CameraIntrinsics, ObjectModel, RigidPose
from .primitives import PrimitiveShape
from .synth import PlacedObject, SceneConfig, SyntheticScene


# ---------------------------------------------------------------------------
# JSON building blocks
# ---------------------------------------------------------------------------

def pose_to_json(pose: RigidPose) -> dict:
    x, y, z, w = pose.quaternion
    return {"quaternion": [float(w), float(x), float(y), float(z)],
            "translation": [float(v) for v in pose.translation]}


def pose_from_json(obj, where: str) -> RigidPose:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: pose must be an object")
    if "matrix" in obj:
        raise ParseError(f"{where}: matrix poses are rejected; use quaternion+translation")
    for key in ("quaternion", "translation"):
        if key not in obj:
            raise ParseError(f"{where}: missing field '{key}'")
    q = obj["quaternion"]
    t = obj["translation"]
    if not (isinstance(q, list) and len(q) == 4):
        raise ParseError(f"{where}.quaternion: expected 4 numbers [w, x, y, z]")
    if not (isinstance(t, list) and len(t) == 3):
        raise ParseError(f"{where}.translation: expected 3 numbers")
    w, x, y, z = (float(v) for v in q)
    return RigidPose(np.array([x, y, z, w]), np.array([float(v) for v in t]))


def intrinsics_to_json(K: CameraIntrinsics) -> dict:
    return {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
            "width": K.width, "height": K.height}


def intrinsics_from_json(obj, where: str) -> CameraIntrinsics:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: intrinsics must be an object")
    for key in ("fx", "fy", "cx", "cy", "width", "height"):
        if key not in obj:
            raise ParseError(f"{where}: missing field '{key}'")
    try:
        return CameraIntrinsics(float(obj["fx"]), float(obj["fy"]), float(obj["cx"]),
                                float(obj["cy"]), int(obj["width"]), int(obj["height"]))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: invalid intrinsics ({exc})") from exc


def save_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON at line {exc.lineno}") from exc


# ---------------------------------------------------------------------------
# detections
# ---------------------------------------------------------------------------

def detections_to_json(detections) -> list:
    out = []
    for d in detections:
        kps = []
        for px, c in zip(d.keypoint_pixels, d.keypoint_confidences):
            if np.all(np.isfinite(px)):
                kps.append({"u": float(px[0]), "v": float(px[1]), "confidence": float(c)})
            else:
                kps.append(None)
        out.append({
            "view_id": d.view_id,
            "class_id": d.class_id,
            "camera": {"pose": pose_to_json(d.camera_pose),
                       "intrinsics": intrinsics_to_json(d.intrinsics)},
            "keypoints": kps,
        })
    return out


def save_detections(path, detections) -> None:
    save_json(path, {"detections": detections_to_json(detections), "version": "1"})


def load_detections(path):
    """Load detections; schema violations raise ParseError naming the field."""
    data = load_json(path)
    if not isinstance(data, dict) or "detections" not in data:
        raise ParseError(f"{path}: missing field 'detections'")
    out = []
    for i, rec in enumerate(data["detections"]):
        where = f"{path}: detections[{i}]"
        if not isinstance(rec, dict):
            raise ParseError(f"{where}: expected an object")
        for key in ("view_id", "class_id", "camera", "keypoints"):
            if key not in rec:
                raise ParseError(f"{where}: missing field '{key}'")
        cam = rec["camera"]
        if not isinstance(cam, dict) or "pose" not in cam or "intrinsics" not in cam:
            raise ParseError(f"{where}.camera: missing field 'pose' or 'intrinsics'")
        pose = pose_from_json(cam["pose"], f"{where}.camera.pose")
        K = intrinsics_from_json(cam["intrinsics"], f"{where}.camera.intrinsics")
        pixels, conf = [], []
        if not isinstance(rec["keypoints"], list):
            raise ParseError(f"{where}.keypoints: expected a list")
        for j, kp in enumerate(rec["keypoints"]):
            if kp is None:
                pixels.append(None)
                conf.append(0.0)
                continue
            if not isinstance(kp, dict):
                raise ParseError(f"{where}.keypoints[{j}]: expected an object or null")
            for key in ("u", "v", "confidence"):
                if key not in kp:
                    raise ParseError(f"{where}.keypoints[{j}]: missing field '{key}'")
            pixels.append((float(kp["u"]), float(kp["v"])))
            conf.append(float(kp["confidence"]))
        try:
            out.append(ViewDetection(rec["view_id"], str(rec["class_id"]),
                                     pixels, conf, pose, K))
        except ValueError as exc:
            raise ParseError(f"{where}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# scenes, models, estimates, primitives
# ---------------------------------------------------------------------------

def primitive_to_json(p: PrimitiveShape) -> dict:
    rec = {"kind": p.kind, "pose": pose_to_json(p.pose),
           "inlier_count": int(p.inlier_count), "fit_rms": float(p.fit_rms)}
    if p.kind == "cuboid":
        rec["extents"] = [float(v) for v in p.extents]
    else:
        rec["radius"] = float(p.radius)
        rec["height"] = float(p.height)
    return rec


def primitive_from_json(obj, where: str) -> PrimitiveShape:
    for key in ("kind", "pose"):
        if key not in obj:
            raise ParseError(f"{where}: missing field '{key}'")
    pose = pose_from_json(obj["pose"], f"{where}.pose")
    try:
        if obj["kind"] == "cuboid":
            return PrimitiveShape("cuboid", pose, extents=obj["extents"],
                                  inlier_count=int(obj.get("inlier_count", 0)),
                                  fit_rms=float(obj.get("fit_rms", 0.0)))
        return PrimitiveShape("cylinder", pose, radius=float(obj["radius"]),
                              height=float(obj["height"]),
                              inlier_count=int(obj.get("inlier_count", 0)),
                              fit_rms=float(obj.get("fit_rms", 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}: invalid primitive ({exc})") from exc


def save_scene(path, scene: SyntheticScene) -> None:
    objects = []
    for obj, prim in zip(scene.objects, scene.primitives):
        objects.append({
            "class_id": obj.model.class_id,
            "kind": prim.kind,
            "symmetric": bool(obj.model.symmetric),
            "pose": pose_to_json(obj.pose),
            "keypoints": [[float(v) for v in row] for row in obj.model.keypoints],
            "mesh_vertices": [[float(v) for v in row] for row in obj.model.mesh_vertices],
            "primitive": primitive_to_json(prim),
        })
    payload = {
        "version": "1",
        "seed": int(scene.rng_seed),
        "plane": {"normal": [float(v) for v in scene.plane.normal],
                  "offset": float(scene.plane.offset)},
        "cameras": [{"view_id": i, "pose": pose_to_json(c.pose),
                     "intrinsics": intrinsics_to_json(c.intrinsics)}
                    for i, c in enumerate(scene.cameras)],
        "objects": objects,
    }
    save_json(path, payload)


def load_scene(path) -> SyntheticScene:
    data = load_json(path)
    for key in ("plane", "cameras", "objects"):
        if key not in data:
            raise ParseError(f"{path}: missing field '{key}'")
    plane = Plane(np.array(data["plane"]["normal"], dtype=np.float64),
                  float(data["plane"]["offset"]))
    cameras = []
    for i, rec in enumerate(data["cameras"]):
        where = f"{path}: cameras[{i}]"
        cameras.append(Camera(pose_from_json(rec["pose"], where),
                              intrinsics_from_json(rec["intrinsics"], where)))
    objects, primitives = [], []
    for i, rec in enumerate(data["objects"]):
        where = f"{path}: objects[{i}]"
        for key in ("class_id", "pose", "keypoints", "mesh_vertices"):
            if key not in rec:
                raise ParseError(f"{where}: missing field '{key}'")
        model = ObjectModel(str(rec["class_id"]), np.array(rec["keypoints"], dtype=np.float64),
                            np.array(rec["mesh_vertices"], dtype=np.float64),
                            bool(rec.get("symmetric", False)))
        pose = pose_from_json(rec["pose"], f"{where}.pose")
        objects.append(PlacedObject(model, pose))
        if "primitive" in rec:
            primitives.append(primitive_from_json(rec["primitive"], f"{where}.primitive"))
    return SyntheticScene(plane, objects, primitives, cameras,
                          int(data.get("seed", 0)), SceneConfig())


def load_object_models(path) -> dict:
    """class_id -> ObjectModel from a scene (or bare models) JSON file."""
    scene = load_scene(path)
    return {obj.model.class_id: obj.model for obj in scene.objects}


def save_estimates(path, estimates_by_class) -> None:
    records = []
    for class_id, estimates in estimates_by_class.items():
        for est in estimates:
            records.append({
                "class_id": class_id,
                "pose": pose_to_json(est.pose),
                "objective": float(est.objective),
                "detection_ids": list(est.detection_ids),
                "weights": [{"w_avg": w.w_avg, "w_pnp": w.w_pnp, "w_resample": w.w_resample}
                            for w in est.weights],
            })
    save_json(path, {"estimates": records, "version": "1"})


def load_estimates(path):
    data = load_json(path)
    if "estimates" not in data:
        raise ParseError(f"{path}: missing field 'estimates'")
    out = []
    for i, rec in enumerate(data["estimates"]):
        where = f"{path}: estimates[{i}]"
        for key in ("class_id", "pose"):
            if key not in rec:
                raise ParseError(f"{where}: missing field '{key}'")
        weights = tuple(DetectionWeights(w["w_avg"], w["w_pnp"], w["w_resample"])
                        for w in rec.get("weights", []))
        out.append((str(rec["class_id"]),
                    FusedEstimate(pose_from_json(rec["pose"], where),
                                  float(rec.get("objective", 0.0)),
                                  tuple(rec.get("detection_ids", [])), weights)))
    return out


def save_primitives(path, shapes, n_points=None) -> None:
    records = []
    for i, p in enumerate(shapes):
        rec = primitive_to_json(p)
        if n_points is not None:
            rec["n_points"] = int(n_points[i])
        records.append(rec)
    save_json(path, {"primitives": records, "version": "1"})


def load_primitives(path):
    data = load_json(path)
    if "primitives" not in data:
        raise ParseError(f"{path}: missing field 'primitives'")
    return [primitive_from_json(rec, f"{path}: primitives[{i}]")
            for i, rec in enumerate(data["primitives"])]


# ---------------------------------------------------------------------------
# PLY point clouds
# ---------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def save_ply(path, cloud: PointCloud, binary: bool = True) -> None:
    """Write x,y,z as float64 (plus uchar RGB when present)."""
    has_color = cloud.colors is not None
    n = len(cloud)
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {n}",
              "property double x", "property double y", "property double z"]
    if has_color:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
            if has_color:
                fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
            rec = np.empty(n, dtype=np.dtype(fields))
            rec["x"], rec["y"], rec["z"] = cloud.points.T
            if has_color:
                rec["red"], rec["green"], rec["blue"] = cloud.colors.T
            fh.write(rec.tobytes())
        else:
            lines = []
            for i in range(n):
                parts = [repr(float(v)) for v in cloud.points[i]]
                if has_color:
                    parts += [str(int(v)) for v in cloud.colors[i]]
                lines.append(" ".join(parts))
            fh.write(("\n".join(lines) + ("\n" if lines else "")).encode("ascii"))


def load_ply(path) -> PointCloud:
    """Read an ASCII or binary little-endian PLY with x,y,z (and optional
    uchar red/green/blue). Malformed headers raise ParseError with the
    offending line number."""
    with open(path, "rb") as fh:
        blob = fh.read()

    lines = []
    pos = 0
    while True:
        nl = blob.find(b"\n", pos)
        if nl < 0:
            raise ParseError(f"{path}: line {len(lines) + 1}: header ended before end_header")
        lines.append(blob[pos:nl].decode("ascii", errors="replace").rstrip("\r"))
        pos = nl + 1
        if lines[-1].strip() == "end_header":
            break
        if len(lines) > 200:
            raise ParseError(f"{path}: line {len(lines)}: runaway header")

    if not lines or lines[0].strip() != "ply":
        raise ParseError(f"{path}: line 1: not a PLY file (missing 'ply' magic)")

    fmt = None
    n_vertex = None
    props = []
    in_vertex = False
    for lineno, line in enumerate(lines[1:-1], start=2):
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            if len(tok) < 3 or tok[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"{path}: line {lineno}: unsupported format {line!r}")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError(f"{path}: line {lineno}: malformed element line")
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                try:
                    n_vertex = int(tok[2])
                except ValueError:
                    raise ParseError(f"{path}: line {lineno}: vertex count is not an integer")
        elif tok[0] == "property" and in_vertex:
            if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                raise ParseError(f"{path}: line {lineno}: unsupported property {line!r}")
            props.append((tok[2], _PLY_TYPES[tok[1]]))
    if fmt is None:
        raise ParseError(f"{path}: line 2: missing format line")
    if n_vertex is None:
        raise ParseError(f"{path}: missing 'element vertex' declaration")
    names = [name for name, _ in props]
    for need in ("x", "y", "z"):
        if need not in names:
            raise ParseError(f"{path}: vertex element lacks property '{need}'")

    if fmt == "ascii":
        rows = blob[pos:].decode("ascii", errors="replace").splitlines()
        if len(rows) < n_vertex:
            raise ParseError(f"{path}: truncated file: {len(rows)} of {n_vertex} vertex rows")
        data = np.empty((n_vertex, len(props)))
        for i in range(n_vertex):
            parts = rows[i].split()
            if len(parts) < len(props):
                raise ParseError(f"{path}: vertex row {i}: "
                                 f"{len(parts)} of {len(props)} values present")
            data[i] = [float(v) for v in parts[: len(props)]]
        cols = {name: data[:, k] for k, (name, _) in enumerate(props)}
    else:
        dtype = np.dtype([(name, "<" + t) for name, t in props])
        need = n_vertex * dtype.itemsize
        if len(blob) - pos < need:
            raise ParseError(f"{path}: truncated file: {len(blob) - pos} of {need} payload bytes")
        rec = np.frombuffer(blob, dtype=dtype, count=n_vertex, offset=pos)
        cols = {name: rec[name].astype(np.float64) for name, _ in props}

    points = np.column_stack([cols["x"], cols["y"], cols["z"]])
    colors = None
    if all(c in cols for c in ("red", "green", "blue")):
        colors = np.column_stack([cols["red"], cols["green"], cols["blue"]]).astype(np.uint8)
    return PointCloud(points, colors)


# ---------------------------------------------------------------------------
# depth maps and masks
# ---------------------------------------------------------------------------

def save_depth(path, dm: DepthMap) -> None:
    """Raw float grid (.npz) or 16-bit millimeter raster (.png)."""
    path = str(path)
    if path.endswith(".png"):
        mm = np.zeros((dm.height, dm.width), dtype=np.uint16)
        mm[dm.valid] = np.clip(np.round(dm.depth[dm.valid] * 1000.0), 1, 65535).astype(np.uint16)
        Image.fromarray(mm).save(path)
    else:
        np.savez(path if path.endswith(".npz") else path + ".npz",
                 depth=dm.depth, valid=dm.valid)


def load_depth(path) -> DepthMap:
    path = str(path)
    if path.endswith(".png"):
        mm = np.asarray(Image.open(path), dtype=np.uint16)
        valid = mm > 0
        depth = np.where(valid, mm / 1000.0, np.inf)
        return DepthMap(mm.shape[1], mm.shape[0], depth, valid)
    data = np.load(path)
    depth = data["depth"]
    return DepthMap(depth.shape[1], depth.shape[0], depth, data["valid"])


def save_masks(path, masks) -> None:
    np.savez(path, **{f"view_{i:03d}": np.asarray(m, dtype=np.uint16)
                      for i, m in enumerate(masks)})


def load_masks(path):
    data = np.load(path)
    return [data[k] for k in sorted(data.files)]
