"""BEV perception/prediction kernels and evaluation."""

__version__ = "0.1.0"

from .boxes import DetectionBox, bev_distance, wrap_angle
from .errors import BevkitError, ConfigError, ContractError, FormatError, GenerationError
from .evaluation import (bev_nms, detection_metrics, map_metric, match_detections, nds,
                         seg_iou, tp_errors, vpq)
from .future import FlowField, LatentMap, StateSequence, flow_warp, rollout, sample_latent
from .geometry import Camera, CameraRig, DepthBins, FeatureMap, LiftedCloud, lift, pillar_pool
from .grid import (DET_SPEC, MAP_SPEC, MOTION_SPEC, BEVGrid, BEVTransform, GridSpec,
                   apply_bev_transform, grid_sample, read_grid, write_grid)
from .synth import Scene, SceneConfig, generate, read_scene, write_scene
from .temporal import EgoPose, align, align_sequence

__all__ = [
    "__version__", "DetectionBox", "bev_distance", "wrap_angle",
    "BevkitError", "ConfigError", "ContractError", "FormatError", "GenerationError",
    "bev_nms", "detection_metrics", "map_metric", "match_detections", "nds", "seg_iou",
    "tp_errors", "vpq", "FlowField", "LatentMap", "StateSequence", "flow_warp", "rollout",
    "sample_latent", "Camera", "CameraRig", "DepthBins", "FeatureMap", "LiftedCloud", "lift",
    "pillar_pool", "DET_SPEC", "MAP_SPEC", "MOTION_SPEC", "BEVGrid", "BEVTransform", "GridSpec",
    "apply_bev_transform", "grid_sample", "read_grid", "write_grid", "Scene", "SceneConfig",
    "generate", "read_scene", "write_scene", "EgoPose", "align", "align_sequence",
]
