"""Segmentation, video panoptic quality and center-distance detection metrics."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .boxes import DetectionBox, bev_distance, wrap_angle
from .errors import ContractError
from .grid import GridSpec

DISTANCE_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
TP_DISTANCE_THRESHOLD = 2.0
VPQ_IOU_THRESHOLD = 0.5
# Side lengths (m) of the square evaluation areas around the ego vehicle.
SHORT_RANGE = 30.0
LONG_RANGE = 100.0
TP_METRICS = ("ate", "ase", "aoe", "ave")
# Attribute error is not evaluated, so NDS averages mAP (weight 5) with four TP terms.
NDS_DIVISOR = 9.0


# --- segmentation -----------------------------------------------------------

def seg_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """IoU of two boolean masks; 1.0 when both are empty."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ContractError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def range_crop(frame: np.ndarray, spec: GridSpec, side: float) -> np.ndarray:
    """Cells whose centres lie in the ``side`` x ``side`` square centred on the ego origin."""
    half = 0.5 * side
    xs, ys = spec.x_centers(), spec.y_centers()
    cols = np.flatnonzero(np.abs(xs) <= half)
    rows = np.flatnonzero(np.abs(ys) <= half)
    if cols.size == 0 or rows.size == 0:
        raise ContractError(f"crop of {side} m leaves no cells of the grid")
    return frame[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]


# --- video panoptic quality -------------------------------------------------

@dataclass
class FrameMatch:
    tp: list[tuple[int, int, float]] = field(default_factory=list)
    fp: list[int] = field(default_factory=list)
    fn: list[int] = field(default_factory=list)

    @property
    def iou_sum(self) -> float:
        return sum(iou for _, _, iou in self.tp)

    @property
    def denominator(self) -> float:
        return len(self.tp) + 0.5 * len(self.fp) + 0.5 * len(self.fn)

    def ratio(self) -> float:
        # a frame with nothing to find and nothing predicted is perfect
        den = self.denominator
        return 1.0 if den == 0 else self.iou_sum / den


@dataclass
class VPQAccumulator:
    """Per-timestamp TP/FP/FN sets keyed by frame index.

    ``merge`` combines accumulators over disjoint frame sets; the final score
    does not depend on merge order.
    """

    frames: dict[int, FrameMatch] = field(default_factory=dict)

    def add(self, t: int, match: FrameMatch) -> None:
        if t in self.frames:
            raise ContractError(f"frame {t} already accumulated")
        self.frames[t] = match

    def merge(self, other: "VPQAccumulator") -> "VPQAccumulator":
        out = VPQAccumulator(dict(self.frames))
        for t, m in other.frames.items():
            out.add(t, m)
        return out

    def score(self) -> float:
        if not self.frames:
            return 0.0
        return math.fsum(self.frames[t].ratio() for t in sorted(self.frames)) / len(self.frames)

    def totals(self) -> dict[str, float]:
        return {
            "tp": sum(len(m.tp) for m in self.frames.values()),
            "fp": sum(len(m.fp) for m in self.frames.values()),
            "fn": sum(len(m.fn) for m in self.frames.values()),
            "iou_sum": math.fsum(m.iou_sum for m in self.frames.values()),
        }


def match_instances(pred: np.ndarray, gt: np.ndarray,
                    iou_threshold: float = VPQ_IOU_THRESHOLD) -> FrameMatch:
    """One-to-one instance matching of two id rasters (0 = background) by IoU > threshold."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ContractError(f"instance frames differ in shape: {pred.shape} vs {gt.shape}")
    if (pred < 0).any() or (gt < 0).any():
        raise ContractError("instance ids must be non-negative")
    pred = pred.astype(np.int64)
    gt = gt.astype(np.int64)
    pred_ids, pred_area = np.unique(pred[pred > 0], return_counts=True)
    gt_ids, gt_area = np.unique(gt[gt > 0], return_counts=True)
    pred_area = dict(zip(pred_ids.tolist(), pred_area.tolist()))
    gt_area = dict(zip(gt_ids.tolist(), gt_area.tolist()))

    both = (pred > 0) & (gt > 0)
    offset = int(pred.max()) + 1 if pred.size else 1
    combos, inter = np.unique(gt[both] * offset + pred[both], return_counts=True)
    candidates = []
    for combo, n in zip(combos.tolist(), inter.tolist()):
        g, p = divmod(combo, offset)
        iou = n / (pred_area[p] + gt_area[g] - n)
        if iou > iou_threshold:
            candidates.append((iou, p, g))
    # IoU > 0.5 pairs are already unique; the greedy pass only matters for lower thresholds
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    match = FrameMatch()
    used_p, used_g = set(), set()
    for iou, p, g in candidates:
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
        match.tp.append((p, g, iou))
    match.tp.sort(key=lambda m: (m[1], m[0]))
    match.fp = sorted(p for p in pred_area if p not in used_p)
    match.fn = sorted(g for g in gt_area if g not in used_g)
    return match


def vpq(pred: Sequence[np.ndarray], gt: Sequence[np.ndarray],
        iou_threshold: float = VPQ_IOU_THRESHOLD) -> tuple[float, VPQAccumulator]:
    """Video panoptic quality over ``T + 1`` frames.

    Each frame contributes ``sum(IoU over TP) / (|TP| + |FP|/2 + |FN|/2)``;
    the per-frame ratios are summed and divided by the number of frames.
    """
    if len(pred) != len(gt):
        raise ContractError(f"sequence lengths differ: {len(pred)} vs {len(gt)}")
    if not gt:
        raise ContractError("empty sequences")
    acc = VPQAccumulator()
    for t, (p, g) in enumerate(zip(pred, gt)):
        acc.add(t, match_instances(p, g, iou_threshold))
    return acc.score(), acc


# --- detection ----------------------------------------------------------------

@dataclass
class DetectionMatching:
    """Result of center-distance matching; indices refer to the input lists."""

    preds: Sequence[DetectionBox]
    gts: Sequence[DetectionBox]
    threshold: float
    tp: list[tuple[int, int, float]] = field(default_factory=list)
    fp: list[int] = field(default_factory=list)
    fn: list[int] = field(default_factory=list)

    def pred_is_tp(self) -> dict[int, bool]:
        flags = {i: False for i in self.fp}
        flags.update({p: True for p, _, _ in self.tp})
        return flags


def score_order(preds: Sequence[DetectionBox]) -> list[int]:
    """Indices by descending score; equal scores keep input order."""
    return sorted(range(len(preds)), key=lambda i: -preds[i].score)


def match_detections(preds: Sequence[DetectionBox], gts: Sequence[DetectionBox],
                     threshold: float) -> DetectionMatching:
    """Greedy matching in descending score order.

    Each prediction takes the nearest unmatched ground truth of the same class
    and sample whose BEV centre distance is strictly below ``threshold``.
    Distance ties go to the lower ground-truth index.
    """
    if not threshold > 0:
        raise ContractError(f"threshold must be positive, got {threshold}")
    result = DetectionMatching(preds, gts, threshold)
    taken: set[int] = set()
    for pi in score_order(preds):
        p = preds[pi]
        best, best_d = -1, math.inf
        for gi, g in enumerate(gts):
            if gi in taken or g.label != p.label or g.sample != p.sample:
                continue
            d = bev_distance(p, g)
            if d < threshold and d < best_d:
                best, best_d = gi, d
        if best >= 0:
            taken.add(best)
            result.tp.append((pi, best, best_d))
        else:
            result.fp.append(pi)
    result.fn = [gi for gi in range(len(gts)) if gi not in taken]
    return result


def precision_recall(preds: Sequence[DetectionBox], gts: Sequence[DetectionBox],
                     threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative precision and recall after each prediction in score order."""
    matching = match_detections(preds, gts, threshold)
    flags = matching.pred_is_tp()
    hits = np.array([flags[i] for i in score_order(preds)], dtype=np.float64)
    tp = np.cumsum(hits)
    ranks = np.arange(1, len(hits) + 1, dtype=np.float64)
    n_gt = len(gts)
    recall = tp / n_gt if n_gt else np.zeros_like(tp)
    return tp / ranks, recall


def average_precision(preds: Sequence[DetectionBox], gts: Sequence[DetectionBox],
                      threshold: float) -> float:
    """Exact area under the interpolated precision-recall staircase.

    Precision at rank k is replaced by the best precision at any rank >= k;
    the area is the sum of recall increments times that precision.  No
    minimum-recall or minimum-precision clipping is applied.
    """
    if not gts:
        return 0.0
    if not preds:
        return 0.0
    precision, recall = precision_recall(preds, gts, threshold)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate(([0.0], recall)))
    return float(np.clip(np.sum(steps * envelope), 0.0, 1.0))


def _by_label(boxes: Iterable[DetectionBox]) -> dict[str, list[DetectionBox]]:
    out: dict[str, list[DetectionBox]] = defaultdict(list)
    for b in boxes:
        out[b.label].append(b)
    return out


def class_average_precisions(preds: Sequence[DetectionBox], gts: Sequence[DetectionBox],
                             thresholds: Sequence[float] = DISTANCE_THRESHOLDS
                             ) -> dict[tuple[str, float], float]:
    pred_by, gt_by = _by_label(preds), _by_label(gts)
    return {(label, th): average_precision(pred_by.get(label, []), gt_by[label], th)
            for label in sorted(gt_by) for th in thresholds}


def map_metric(preds: Sequence[DetectionBox], gts: Sequence[DetectionBox],
               thresholds: Sequence[float] = DISTANCE_THRESHOLDS) -> float:
    """Mean AP over the distance thresholds and the classes present in ``gts`` (0 if none)."""
    aps = class_average_precisions(preds, gts, thresholds)
    if not aps:
        return 0.0
    return math.fsum(aps.values()) / len(aps)


@dataclass(frozen=True)
class TPErrors:
    ate: float = 1.0
    ase: float = 1.0
    aoe: float = 1.0
    ave: float = 1.0

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in TP_METRICS}


def scale_iou(a: DetectionBox, b: DetectionBox) -> float:
    """3D IoU of two boxes after aligning centres and orientation."""
    inter = min(a.w, b.w) * min(a.l, b.l) * min(a.h, b.h)
    return inter / (a.w * a.l * a.h + b.w * b.l * b.h - inter)


def tp_errors(matching: DetectionMatching) -> TPErrors:
    """Mean translation, scale, orientation and velocity errors over matched pairs.

    With no true positives every error is 1.
    """
    if not matching.tp:
        return TPErrors()
    ate, ase, aoe, ave = [], [], [], []
    for pi, gi, _ in matching.tp:
        p, g = matching.preds[pi], matching.gts[gi]
        ate.append(bev_distance(p, g))
        ase.append(1.0 - scale_iou(p, g))
        aoe.append(abs(wrap_angle(p.yaw - g.yaw)))
        ave.append(math.hypot(p.vx - g.vx, p.vy - g.vy))
    n = len(matching.tp)
    return TPErrors(math.fsum(ate) / n, math.fsum(ase) / n, math.fsum(aoe) / n, math.fsum(ave) / n)


def nds(map_value: float, errors: TPErrors | Mapping[str, float] | Sequence[float]) -> float:
    """``(5 * mAP + sum(1 - min(1, err))) / 9`` over ATE, ASE, AOE and AVE."""
    if isinstance(errors, TPErrors):
        values = list(errors.as_dict().values())
    elif isinstance(errors, Mapping):
        values = [errors[name] for name in TP_METRICS]
    else:
        values = list(errors)
    if len(values) != len(TP_METRICS):
        raise ContractError(f"expected {len(TP_METRICS)} TP errors, got {len(values)}")
    if not 0.0 <= map_value <= 1.0 or any(v < 0 for v in values):
        raise ContractError("mAP must lie in [0, 1] and errors must be non-negative")
    score = 5.0 * map_value + math.fsum(1.0 - min(1.0, v) for v in values)
    return score / NDS_DIVISOR


@dataclass
class DetectionMetrics:
    map: float
    nds: float
    errors: TPErrors
    class_ap: dict[tuple[str, float], float]
    class_errors: dict[str, TPErrors]

    def rows(self) -> list[tuple[str, str, str, float]]:
        rows = [("ap", label, repr(th), ap) for (label, th), ap in self.class_ap.items()]
        for label, err in self.class_errors.items():
            rows += [(name, label, repr(TP_DISTANCE_THRESHOLD), v) for name, v in err.as_dict().items()]
        rows += [("map", "all", "all", self.map)]
        rows += [("m" + name, "all", repr(TP_DISTANCE_THRESHOLD), v)
                 for name, v in self.errors.as_dict().items()]
        rows += [("nds", "all", "all", self.nds)]
        return rows


def detection_metrics(preds: Sequence[DetectionBox], gts: Sequence[DetectionBox],
                      thresholds: Sequence[float] = DISTANCE_THRESHOLDS,
                      tp_threshold: float = TP_DISTANCE_THRESHOLD) -> DetectionMetrics:
    class_ap = class_average_precisions(preds, gts, thresholds)
    map_value = math.fsum(class_ap.values()) / len(class_ap) if class_ap else 0.0
    pred_by, gt_by = _by_label(preds), _by_label(gts)
    class_errors = {label: tp_errors(match_detections(pred_by.get(label, []), gt_by[label],
                                                      tp_threshold))
                    for label in sorted(gt_by)}
    if class_errors:
        mean = TPErrors(*(math.fsum(getattr(e, n) for e in class_errors.values()) / len(class_errors)
                          for n in TP_METRICS))
    else:
        mean = TPErrors()
    return DetectionMetrics(map_value, nds(map_value, mean), mean, class_ap, class_errors)


def bev_nms(boxes: Sequence[DetectionBox], class_scale_factors: Mapping[str, float] | None,
            distance_threshold: float) -> list[DetectionBox]:
    """Scale-NMS on BEV centres.

    Per class, centres are scaled about the ego origin by the class factor
    (default 1); a box is suppressed if its scaled centre lies closer than
    ``distance_threshold`` to an already kept box of the same class.  Kept
    boxes are returned unscaled, highest score first.
    """
    if not distance_threshold > 0:
        raise ContractError(f"distance_threshold must be positive, got {distance_threshold}")
    factors = dict(class_scale_factors or {})
    if any(not f > 0 for f in factors.values()):
        raise ContractError("class scale factors must be positive")
    kept: list[int] = []
    kept_xy: dict[tuple[str, int], list[tuple[float, float]]] = defaultdict(list)
    for i in score_order(boxes):
        b = boxes[i]
        f = factors.get(b.label, 1.0)
        sx, sy = b.x * f, b.y * f
        key = (b.label, b.sample)
        if any(math.hypot(sx - kx, sy - ky) < distance_threshold for kx, ky in kept_xy[key]):
            continue
        kept.append(i)
        kept_xy[key].append((sx, sy))
    return [boxes[i] for i in kept]


# --- reporting ---------------------------------------------------------------

METRIC_HEADER = ("metric", "class", "threshold", "value")


def metrics_csv(rows: Iterable[tuple[str, str, str, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_HEADER)
    for name, label, threshold, value in rows:
        writer.writerow((name, label, threshold, repr(float(value))))
    return buf.getvalue()
