"""End-to-end dataflow with ground-truth stand-ins for the learned stages.

lift -> pillar pool -> ego-motion alignment -> per-task grid sampling ->
iterative-flow rollout -> evaluation.  The depth network is replaced by
one-hot depths ray-cast against the scene's boxes, the detection head by
connected components on the pooled present-frame BEV, the map head by the
ground-truth map raster, and the flow network by a step function (ground
truth or zero flow).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .boxes import DetectionBox
from .config import RunConfig
from .errors import BevkitError, ContractError
from .evaluation import (LONG_RANGE, SHORT_RANGE, DetectionMetrics, bev_nms,
                         detection_metrics, range_crop, seg_iou, vpq)
from .future import LatentMap, StateSequence, rollout, sample_latent, zero_flow_step
from .geometry import FeatureMap, build_frustum, lift, pillar_pool
from .grid import BEVGrid, GridSpec, grid_sample
from .synth import MAP_CLASSES, Scene, gt_flow_step
from .temporal import align_sequence

FEATURE_CHANNELS = ("agent", "all")


def synthetic_feature_map(scene: Scene, t: int, config: RunConfig) -> FeatureMap:
    """One-hot depth at the first depth bin inside a box, else where the ray meets the ground.

    Channel 0 marks pixels whose ray hits an agent, channel 1 is constant.
    """
    rig = config.camera.rig()
    hw = config.camera.feature_hw
    pts = build_frustum(hw, config.depth, rig, config.camera.stride)
    hit = np.zeros(pts.shape[:-1], dtype=bool)
    for b in scene.boxes_in_own_frame(t):
        c, s = math.cos(b.yaw), math.sin(b.yaw)
        dx, dy = pts[..., 0] - b.x, pts[..., 1] - b.y
        u = dx * c + dy * s
        v = dy * c - dx * s
        hit |= ((np.abs(u) <= 0.5 * b.l) & (np.abs(v) <= 0.5 * b.w)
                & (pts[..., 2] >= 0.0) & (pts[..., 2] <= b.h))
    depth_count = config.depth.count
    ground = pts[..., 2] <= 0.0
    ground_idx = np.where(ground.any(-1), ground.argmax(-1), depth_count - 1)
    has_hit = hit.any(-1)
    idx = np.where(has_hit, hit.argmax(-1), ground_idx)
    depth = np.zeros(hit.shape, dtype=np.float64)
    np.put_along_axis(depth, idx[..., None], 1.0, axis=-1)
    feats = np.stack([has_hit.astype(np.float64), np.ones(has_hit.shape)], axis=-1)
    return FeatureMap(feats, depth)


def bev_for_frame(scene: Scene, t: int, config: RunConfig) -> BEVGrid:
    cloud = lift(synthetic_feature_map(scene, t, config), config.depth, config.camera.rig(),
                 config.camera.stride)
    return pillar_pool(cloud, scene.config.det_spec, config.z_bounds)


def detect(bev: BEVGrid, gt_boxes: list[DetectionBox], config: RunConfig) -> list[DetectionBox]:
    """Connected components of agent mass; attributes copied from the nearest GT box."""
    mass = bev.data[..., 0].astype(np.float64)
    labels, n = ndimage.label(mass > 0, structure=np.ones((3, 3)))
    if n == 0 or not gt_boxes:
        return []
    index = np.arange(1, n + 1)
    totals = ndimage.sum(mass, labels, index)
    cy, cx = np.array(ndimage.center_of_mass(mass, labels, index)).T
    spec = bev.spec
    xs = spec.x_min + (cx + 0.5) * spec.cell_size
    ys = spec.y_min + (cy + 0.5) * spec.cell_size
    top = totals.max()
    dets = []
    for x, y, m in zip(xs, ys, totals):
        g = min(gt_boxes, key=lambda b: (b.x - x) ** 2 + (b.y - y) ** 2)
        dets.append(DetectionBox(float(x), float(y), g.z, g.w, g.l, g.h, g.yaw, g.vx, g.vy,
                                 g.label, float(min(1.0, m / top)), 0, g.sample))
    return bev_nms(dets, dict(config.nms_scales), config.nms_distance)


def decode_instances(states: StateSequence) -> list[np.ndarray]:
    return [np.rint(s.data[..., 0]).astype(np.int32) for s in states]


@dataclass
class PipelineResult:
    stage_shapes: dict[str, tuple[int, int]]
    aligned: list[BEVGrid]
    fused: BEVGrid
    detections: list[DetectionBox]
    states: StateSequence
    metrics: dict[str, float] = field(default_factory=dict)
    detection: DetectionMetrics | None = None

    def metric_rows(self) -> list[tuple[str, str, str, float]]:
        rows = list(self.detection.rows()) if self.detection else []
        for name, value in self.metrics.items():
            metric, _, label = name.partition(":")
            rows.append((metric, label or "all", "all", value))
        return rows


def evaluate_motion(pred: list[np.ndarray], gt: list[np.ndarray], spec: GridSpec) -> dict[str, float]:
    out = {}
    for tag, side in (("short", SHORT_RANGE), ("long", LONG_RANGE)):
        p = [range_crop(f, spec, side) for f in pred]
        g = [range_crop(f, spec, side) for f in gt]
        out[f"vpq_{tag}"] = vpq(p, g)[0]
        ious = [seg_iou(a > 0, b > 0) for a, b in zip(p, g)]
        out[f"iou_{tag}"] = math.fsum(ious) / len(ious)
        out[f"iou_min_{tag}"] = min(ious)
    return out


def evaluate_map(pred: np.ndarray, gt: np.ndarray) -> dict[str, float]:
    ious = {name: seg_iou(pred[..., c] > 0, gt[..., c] > 0) for c, name in enumerate(MAP_CLASSES)}
    out = {f"map_iou:{k}": v for k, v in ious.items()}
    out["map_miou"] = math.fsum(ious.values()) / len(ious)
    return out


def run_pipeline(scene: Scene, config: RunConfig, seed: int | None = None) -> PipelineResult:
    sc = scene.config
    stage = "lift"
    try:
        frames = [bev_for_frame(scene, t, config) for t in range(sc.n_past)]
        stage = "align"
        aligned = align_sequence(frames, scene.poses[:sc.present])
        stack = np.stack([g.data for g in aligned]).astype(np.float64)
        fused = BEVGrid(sc.det_spec, stack.mean(axis=0))

        stage = "grid_sample"
        per_task = {name: grid_sample(fused, spec) for name, spec in
                    (("det", sc.det_spec), ("map", sc.map_spec), ("motion", sc.motion_spec))}
        shapes = {name: (g.spec.nx, g.spec.ny) for name, g in per_task.items()}

        stage = "detect"
        dets = detect(aligned[-1], scene.boxes[sc.present], config)
        det_metrics = detection_metrics(dets, scene.boxes[sc.present])

        stage = "rollout"
        latent_seed = sc.seed if seed is None else seed
        latent = sample_latent(LatentMap.standard(sc.motion_spec, config.latent_dim),
                               np.random.default_rng(latent_seed))
        step_fn = gt_flow_step(scene) if config.step == "gt" else zero_flow_step
        states = rollout(scene.state_grid(sc.present), latent, step_fn, sc.horizon)

        stage = "evaluate"
        metrics = evaluate_motion(decode_instances(states), scene.future_instances(), sc.motion_spec)
        metrics.update(evaluate_map(scene.map_raster, scene.map_raster))
    except ContractError as exc:
        raise ContractError(str(exc), stage=exc.stage or stage) from None
    except BevkitError:
        raise
    except (ValueError, IndexError) as exc:
        raise ContractError(str(exc), stage=stage) from exc
    return PipelineResult(shapes, aligned, fused, dets, states, metrics, det_metrics)
