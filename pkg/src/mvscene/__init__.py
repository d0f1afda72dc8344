"""Multi-view tabletop scene understanding.

Fuses per-view object keypoint detections into 6-DoF poses, refines
virtual depth maps rendered from reconstructed point clouds, votes
multi-view segmentations into primitive-shape fits, and evaluates every
output against a built-in synthetic-scene oracle.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .depthmap import DepthMap, Plane, PointCloud
from .fusion import (CandidateSet, DetectionWeights, FusedEstimate, FusionConfig,
                     ViewDetection, fuse_object_poses)
from .geometry import (Camera, CameraIntrinsics, ObjectModel, RigidPose, compose, invert,
                       project, rotation_geodesic)
from .metrics import AccuracyCurve, accuracy_curve, add_metric, add_s_metric, f_score
from .pnp import Correspondence, PnPResult, pnp_consistency_weight, solve_pnp
from .primitives import (PrimitiveShape, SegmentationInstance, dbscan, fit_cuboid_ransac,
                         fit_cylinder_ransac, multiview_vote)
from .synth import SceneConfig, SyntheticScene, generate_scene

__version__ = "0.1.0"

__all__ = [
    "AccuracyCurve", "Camera", "CameraIntrinsics", "CandidateSet", "Correspondence",
    "DepthMap", "DetectionWeights", "FusedEstimate", "FusionConfig", "KERNEL_BACKEND",
    "ObjectModel", "Plane", "PnPResult", "PointCloud", "PrimitiveShape", "RigidPose",
    "SceneConfig", "SegmentationInstance", "SyntheticScene", "ViewDetection",
    "accuracy_curve", "add_metric", "add_s_metric", "compose", "dbscan", "f_score",
    "fit_cuboid_ransac", "fit_cylinder_ransac", "fuse_object_poses", "generate_scene",
    "invert", "multiview_vote", "pnp_consistency_weight", "project", "rotation_geodesic",
    "solve_pnp",
]
