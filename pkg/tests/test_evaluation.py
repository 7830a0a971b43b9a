import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bevkit.boxes import DetectionBox
from bevkit.errors import ContractError
from bevkit.evaluation import (DISTANCE_THRESHOLDS, TPErrors, VPQAccumulator, average_precision,
                               bev_nms, detection_metrics, map_metric, match_detections,
                               match_instances, metrics_csv, nds, precision_recall, range_crop,
                               score_order, seg_iou, tp_errors, vpq)
from bevkit.grid import GridSpec
from oracles import staircase_auc, vpq_bruteforce


def box(x, y, label="car", score=1.0, **kw):
    return DetectionBox(float(x), float(y), kw.pop("z", 0.0), kw.pop("w", 2.0), kw.pop("l", 4.0),
                        kw.pop("h", 1.5), label=label, score=float(score), **kw)


@st.composite
def instance_sequences(draw, max_frames=3, side=6, max_inst=6):
    frames = draw(st.integers(1, max_frames))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    pred, gt = [], []
    for _ in range(frames):
        g = np.zeros((side, side), dtype=np.int32)
        for iid in range(1, int(rng.integers(0, max_inst + 1)) + 1):
            i, j = rng.integers(0, side - 1, 2)
            h, w = rng.integers(1, 4, 2)
            g[i:i + h, j:j + w] = iid
        p = g.copy()
        noise = rng.random(g.shape) < draw(st.floats(0.0, 0.5))
        p[noise] = rng.integers(0, max_inst + 1, int(noise.sum()))
        pred.append(p)
        gt.append(g)
    return pred, gt


class TestSegIoU:
    def test_cases(self):
        a = np.zeros((3, 3), bool)
        a[0, :2] = True
        assert seg_iou(a, a) == 1.0
        assert seg_iou(a, ~a) == 0.0
        assert seg_iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0
        gt = np.zeros((4, 4), bool)
        gt[0] = True
        pred = gt.copy()
        pred[0, 3] = False
        pred[3, 3] = True
        assert seg_iou(pred, gt) == 3 / 5

    def test_mismatch(self):
        with pytest.raises(ContractError):
            seg_iou(np.zeros((2, 2)), np.zeros((2, 3)))


class TestVPQ:
    def test_perfect(self):
        g = np.array([[0, 1, 1], [2, 0, 0]])
        assert vpq([g, g, g], [g, g, g])[0] == 1.0

    def test_hand_cases(self):
        gt = np.zeros((4, 4), int)
        gt[0] = 1
        pred = gt.copy()
        pred[0, 3] = 0
        pred[1, 0] = 1
        assert abs(vpq([pred], [gt])[0] - 0.6) <= 1e-9
        pred = gt.copy()
        pred[1, 0] = 1
        pred[3, 3] = 2
        score, acc = vpq([pred], [gt])
        assert abs(score - 0.8 / 1.5) <= 1e-9
        assert acc.totals()["fp"] == 1 and acc.totals()["tp"] == 1

    def test_low_overlap_is_not_a_match(self):
        gt = np.zeros((2, 4), int)
        gt[0] = 1
        pred = np.zeros_like(gt)
        pred[0, :2] = 1
        pred[1, :2] = 1
        m = match_instances(pred, gt)
        assert not m.tp and m.fp == [1] and m.fn == [1]

    @settings(max_examples=80, deadline=None)
    @given(instance_sequences())
    def test_matches_bruteforce(self, seq):
        pred, gt = seq
        score = vpq(pred, gt)[0]
        assert 0.0 <= score <= 1.0
        assert score == pytest.approx(vpq_bruteforce(pred, gt), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(instance_sequences(), st.integers(0, 10 ** 6))
    def test_extra_false_positive_never_helps(self, seq, pick):
        pred, gt = seq
        t = pick % len(pred)
        free = np.argwhere((pred[t] == 0) & (gt[t] == 0))
        if not len(free):
            return
        i, j = free[pick % len(free)]
        extra = [p.copy() for p in pred]
        extra[t][i, j] = int(extra[t].max()) + 1
        assert vpq(extra, gt)[0] <= vpq(pred, gt)[0]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_single_instance_equals_iou(self, seed):
        rng = np.random.default_rng(seed)
        g = (rng.random((5, 5)) < 0.5).astype(int)
        p = (rng.random((5, 5)) < 0.5).astype(int)
        if not g.any() or not p.any():
            return
        iou = seg_iou(p > 0, g > 0)
        assert vpq([p], [g])[0] == pytest.approx(iou if iou > 0.5 else 0.0)

    @settings(max_examples=30, deadline=None)
    @given(instance_sequences(max_frames=4))
    def test_accumulator_merge_order_independent(self, seq):
        pred, gt = seq
        parts = []
        for t, (p, g) in enumerate(zip(pred, gt)):
            acc = VPQAccumulator()
            acc.add(t, match_instances(p, g))
            parts.append(acc)
        fwd, rev = VPQAccumulator(), VPQAccumulator()
        for a in parts:
            fwd = fwd.merge(a)
        for a in reversed(parts):
            rev = rev.merge(a)
        assert fwd.score() == rev.score() == vpq(pred, gt)[0]

    def test_errors(self):
        with pytest.raises(ContractError):
            vpq([np.zeros((2, 2))], [])
        with pytest.raises(ContractError):
            vpq([np.zeros((2, 2))], [np.zeros((3, 3))])
        with pytest.raises(ContractError):
            match_instances(np.array([[-1]]), np.array([[0]]))

    def test_range_crop(self):
        spec = GridSpec(-50.0, 50.0, -50.0, 50.0, 0.5)
        frame = np.zeros(spec.shape)
        assert range_crop(frame, spec, 30.0).shape == (60, 60)
        assert range_crop(frame, spec, 100.0).shape == (200, 200)


class TestMatching:
    def test_distance_thresholds(self):
        gt, pred = [box(0, 0)], [box(1.5, 0)]
        for th, tp in zip(DISTANCE_THRESHOLDS, (0, 0, 1, 1)):
            assert len(match_detections(pred, gt, th).tp) == tp

    def test_identical_and_empty(self):
        m = match_detections([box(1, 2)], [box(1, 2)], 0.5)
        assert m.tp == [(0, 0, 0.0)] and tp_errors(m).ate == 0.0
        m = match_detections([], [box(0, 0), box(5, 5)], 2.0)
        assert m.fn == [0, 1] and not m.tp and not m.fp

    def test_class_and_sample_separate(self):
        m = match_detections([box(0, 0, "truck"), box(0, 0, sample=1)], [box(0, 0)], 2.0)
        assert not m.tp and m.fp == [0, 1]

    def test_greedy_known_case(self):
        # the higher-scored prediction claims the nearer GT even if that costs a TP
        gts = [box(0.0, 0), box(1.5, 0)]
        preds = [box(1.0, 0, score=0.9), box(2.6, 0, score=0.5)]
        m = match_detections(preds, gts, 2.0)
        assert [(p, g) for p, g, _ in m.tp] == [(0, 1)] and m.fp == [1]

    def test_invalid_threshold(self):
        with pytest.raises(ContractError):
            match_detections([], [], 0.0)

    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 1), st.booleans()), max_size=6),
           st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.booleans()), max_size=6),
           st.sampled_from(DISTANCE_THRESHOLDS), st.floats(0.01, 1.0))
    def test_partition_and_scale_invariance(self, preds, gts, th, factor):
        labels = ("car", "truck")
        P = [box(x, y, labels[c], s) for x, y, s, c in preds]
        G = [box(x, y, labels[c]) for x, y, c in gts]
        m = match_detections(P, G, th)
        tp_p = [p for p, _, _ in m.tp]
        tp_g = [g for _, g, _ in m.tp]
        assert sorted(tp_p + m.fp) == list(range(len(P)))
        assert sorted(tp_g + m.fn) == list(range(len(G)))
        assert all(d < th for _, _, d in m.tp)
        scaled = [b.with_score(b.score * factor) for b in P]
        if score_order(scaled) == score_order(P):
            assert match_detections(scaled, G, th).tp == m.tp
            assert average_precision(scaled, G, th) == average_precision(P, G, th)


class TestAP:
    def test_staircase_example(self):
        gts = [box(0, 0), box(10, 0)]
        preds = [box(0, 0, score=0.9), box(-10, 0, score=0.8)]
        precision, recall = precision_recall(preds, gts, 2.0)
        assert list(zip(precision, recall)) == [(1.0, 0.5), (0.5, 0.5)]
        ap = average_precision(preds, gts, 2.0)
        assert ap == 0.5 == staircase_auc([True, False], 2)

    def test_perfect_and_empty(self):
        gts = [box(0, 0), box(10, 0, "truck")]
        assert map_metric(gts, gts) == 1.0
        assert map_metric([], gts) == 0.0
        assert map_metric(gts, []) == 0.0

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(-6, 6), st.floats(-6, 6), st.floats(0, 1)), max_size=8),
           st.lists(st.tuples(st.floats(-6, 6), st.floats(-6, 6)), max_size=6),
           st.sampled_from(DISTANCE_THRESHOLDS))
    def test_matches_staircase_oracle(self, preds, gts, th):
        P = [box(x, y, score=s) for x, y, s in preds]
        G = [box(x, y) for x, y in gts]
        flags = match_detections(P, G, th).pred_is_tp()
        want = staircase_auc([flags[i] for i in score_order(P)], len(G))
        ap = average_precision(P, G, th)
        assert 0.0 <= ap <= 1.0
        assert ap == pytest.approx(want, abs=1e-12)


class TestTPErrorsAndNDS:
    def test_yaw_and_velocity(self):
        m = match_detections([box(0, 0, yaw=math.pi / 2, vx=3.0, vy=4.0)], [box(0, 0)], 1.0)
        e = tp_errors(m)
        assert e.aoe == pytest.approx(math.pi / 2) and e.ave == 5.0 and e.ase == 0.0

    def test_yaw_wrap(self):
        m = match_detections([box(0, 0, yaw=3.0)], [box(0, 0, yaw=-3.0)], 1.0)
        assert tp_errors(m).aoe == pytest.approx(2 * math.pi - 6.0)

    def test_scale_error(self):
        m = match_detections([box(0, 0, w=1.0, l=4.0, h=1.5)], [box(0, 0)], 1.0)
        assert tp_errors(m).ase == pytest.approx(0.5)

    def test_no_tp_defaults_to_one(self):
        assert tp_errors(match_detections([], [box(0, 0)], 1.0)) == TPErrors(1, 1, 1, 1)

    def test_nds_values(self):
        assert nds(1.0, TPErrors(0, 0, 0, 0)) == 1.0
        assert nds(0.0, TPErrors(1, 2, 3, 4)) == 0.0
        assert abs(nds(0.4, {"ate": 0, "ase": 0, "aoe": 0, "ave": 0}) - 6.0 / 9.0) <= 1e-9
        with pytest.raises(ContractError):
            nds(0.5, (0, 0, 0))
        with pytest.raises(ContractError):
            nds(1.5, (0, 0, 0, 0))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20), st.floats(0, 1),
                              st.sampled_from(["car", "truck", "pedestrian"])), max_size=8),
           st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20),
                              st.sampled_from(["car", "truck", "pedestrian"])), max_size=8))
    def test_metrics_in_unit_interval(self, preds, gts):
        res = detection_metrics([box(x, y, c, s) for x, y, s, c in preds], [box(x, y, c) for x, y, c in gts])
        assert 0.0 <= res.map <= 1.0 and 0.0 <= res.nds <= 1.0


class TestNMS:
    def test_single(self):
        b = box(3, 4, score=0.3)
        assert bev_nms([b], {}, 1.0) == [b]

    def test_coincident(self):
        a, b = box(0, 0, score=0.8), box(0, 0, score=0.9)
        assert bev_nms([a, b], None, 1.0) == [b]

    def test_scaled_separation(self):
        a, b = box(1, 0, score=0.9), box(2, 0, score=0.8)
        assert len(bev_nms([a, b], {"car": 2.0}, 1.5)) == 2
        assert len(bev_nms([a, b], {"car": 1.0}, 1.5)) == 1

    def test_classes_independent(self):
        assert len(bev_nms([box(0, 0), box(0, 0, "truck")], {}, 1.0)) == 2

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 1)), max_size=10),
           st.floats(0.1, 1.0))
    def test_score_scale_invariant(self, raw, factor):
        boxes = [box(x, y, score=s) for x, y, s in raw]
        kept = bev_nms(boxes, {"car": 1.5}, 1.0)
        scaled = bev_nms([b.with_score(b.score * factor) for b in boxes], {"car": 1.5}, 1.0)
        if score_order([b.with_score(b.score * factor) for b in boxes]) == score_order(boxes):
            assert [(b.x, b.y) for b in kept] == [(b.x, b.y) for b in scaled]
        for i, a in enumerate(kept):
            for b in kept[i + 1:]:
                assert math.hypot(1.5 * (a.x - b.x), 1.5 * (a.y - b.y)) >= 1.0

    def test_invalid(self):
        with pytest.raises(ContractError):
            bev_nms([], {}, 0.0)
        with pytest.raises(ContractError):
            bev_nms([], {"car": 0.0}, 1.0)


def test_metrics_csv():
    text = metrics_csv([("ap", "car", "0.5", 0.25), ("nds", "all", "all", 1.0)])
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["metric", "class", "threshold", "value"]
    assert rows[1] == ["ap", "car", "0.5", "0.25"]
