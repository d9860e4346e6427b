import math
import random

import pytest

from parkgate.metrics import (
    EvalReport,
    GroundTruth,
    PixelBox,
    ScoredDetection,
    average_precision,
    evaluate,
    iou,
    match_detections,
    render_report_kv,
    render_report_table,
)

import oracles


def box(x1, y1, x2, y2):
    return PixelBox(x1, y1, x2, y2)


class TestIou:
    def test_identical_is_one(self):
        b = box(3, 4, 10, 12)
        assert iou(b, b) == 1.0

    def test_disjoint_is_zero(self):
        assert iou(box(0, 0, 1, 1), box(5, 5, 6, 6)) == 0.0

    def test_hand_case_one_seventh(self):
        assert abs(iou(box(0, 0, 2, 2), box(1, 1, 3, 3)) - 1 / 7) < 1e-12

    def test_symmetric(self):
        rng = random.Random(1)
        for _ in range(100):
            a = box(rng.random(), rng.random(), 1 + rng.random(), 1 + rng.random())
            b = box(rng.random(), rng.random(), 1 + rng.random(), 1 + rng.random())
            assert iou(a, b) == iou(b, a)
            assert 0.0 <= iou(a, b) <= 1.0

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            box(1, 1, 1, 2)


class TestMatching:
    def test_missed_truth_is_fn(self):
        result = match_detections([], [GroundTruth(box(0, 0, 1, 1), 0)], 0.5)
        assert (result.tp, result.fp, result.fn) == (0, 0, 1)

    def test_perfect_overlap_is_tp(self):
        truth = [GroundTruth(box(0, 0, 2, 2), 0)]
        preds = [ScoredDetection(box(0, 0, 2, 2), 0, 0.9)]
        result = match_detections(preds, truth, 0.5)
        assert (result.tp, result.fp, result.fn) == (1, 0, 0)

    def test_confidence_order_wins_over_iou(self):
        # higher-confidence prediction claims the truth even with lower IOU
        truth = [GroundTruth(box(0, 0, 10, 10), 0)]
        preds = [
            ScoredDetection(box(0, 0, 10, 8), 0, 0.9),    # iou 0.8
            ScoredDetection(box(0, 0, 10, 9), 0, 0.8),    # iou 0.9
        ]
        result = match_detections(preds, truth, 0.5)
        assert result.flag(0) and not result.flag(1)
        assert (result.tp, result.fp) == (1, 1)

    def test_class_must_match(self):
        truth = [GroundTruth(box(0, 0, 2, 2), 1)]
        preds = [ScoredDetection(box(0, 0, 2, 2), 0, 0.9)]
        result = match_detections(preds, truth, 0.5)
        assert (result.tp, result.fp, result.fn) == (0, 1, 1)

    def test_counts_always_balance(self):
        rng = random.Random(7)
        for _ in range(100):
            preds, truths = _random_scene(rng)
            result = match_detections(preds, truths, 0.5)
            assert result.tp + result.fn == len(truths)
            assert result.tp + result.fp == len(preds)


class TestAveragePrecision:
    def test_single_tp(self):
        assert average_precision([True], 1) == 1.0

    def test_fp_then_tp(self):
        assert average_precision([False, True], 1) == 0.5

    def test_tp_then_fp(self):
        assert average_precision([True, False], 1) == 1.0

    def test_no_truths(self):
        assert average_precision([], 0) == 1.0
        assert average_precision([False], 0) == 0.0

    def test_rank_only_dependence(self):
        # AP depends only on the flag sequence, which is what a strictly
        # monotone confidence rescaling preserves.
        rng = random.Random(3)
        for _ in range(50):
            flags = [rng.random() < 0.5 for _ in range(rng.randrange(1, 8))]
            truths = max(1, sum(flags) + rng.randrange(3))
            assert average_precision(flags, truths) == average_precision(list(flags), truths)


def _random_scene(rng, max_boxes=6, max_classes=3):
    def random_box():
        x1 = rng.uniform(0, 80)
        y1 = rng.uniform(0, 80)
        return box(x1, y1, x1 + rng.uniform(4, 40), y1 + rng.uniform(4, 40))

    truths = [GroundTruth(random_box(), rng.randrange(max_classes))
              for _ in range(rng.randrange(max_boxes + 1))]
    preds = []
    for _ in range(rng.randrange(max_boxes + 1)):
        if truths and rng.random() < 0.6:
            # jittered copy of a truth box so matches actually occur
            t = rng.choice(truths)
            b = t.box
            dx, dy = rng.uniform(-3, 3), rng.uniform(-3, 3)
            preds.append(ScoredDetection(
                box(b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy),
                t.class_id if rng.random() < 0.8 else rng.randrange(max_classes),
                rng.random()))
        else:
            preds.append(ScoredDetection(random_box(), rng.randrange(max_classes),
                                         rng.random()))
    return preds, truths


class TestEvaluate:
    def test_map_is_mean_of_class_aps(self):
        truths = {"i": [GroundTruth(box(0, 0, 2, 2), 0), GroundTruth(box(5, 5, 7, 7), 1),
                        GroundTruth(box(10, 10, 12, 12), 1)]}
        preds = {"i": [ScoredDetection(box(0, 0, 2, 2), 0, 0.9),
                       ScoredDetection(box(5, 5, 7, 7), 1, 0.8),
                       ScoredDetection(box(50, 50, 52, 52), 1, 0.7)]}
        report = evaluate(truths, preds)
        assert report.per_class_ap[0] == 1.0
        assert report.per_class_ap[1] == 0.5
        assert abs(report.map50 - 0.75) < 1e-12

    def test_perfect_predictions(self):
        rng = random.Random(5)
        truths, preds = {}, {}
        for i in range(4):
            _, scene_truths = _random_scene(rng)
            if not scene_truths:
                scene_truths = [GroundTruth(box(0, 0, 5, 5), 0)]
            truths[f"img{i}"] = scene_truths
            preds[f"img{i}"] = [ScoredDetection(t.box, t.class_id, 0.99)
                                for t in scene_truths]
        report = evaluate(truths, preds)
        assert report.precision == 1.0
        assert report.recall == 1.0
        assert report.map50 == 1.0
        assert report.mean_iou == 1.0
        assert report.fn == report.fp == 0

    def test_matches_oracle_on_random_scenes(self):
        rng = random.Random(123)
        for _ in range(200):
            preds, truths = _random_scene(rng)
            report = evaluate({"img": truths}, {"img": preds})
            expect = oracles.naive_evaluate({"img": truths}, {"img": preds})
            assert report.per_class_ap == expect["per_class_ap"]
            assert report.map50 == expect["map50"]
            assert report.precision == expect["precision"]
            assert report.recall == expect["recall"]
            assert report.mean_iou == expect["mean_iou"]
            assert (report.tp, report.fp, report.fn) == \
                (expect["tp"], expect["fp"], expect["fn"])
            assert report.threshold == expect["threshold"]

    def test_matches_oracle_multi_image(self):
        rng = random.Random(55)
        for _ in range(50):
            truths, preds = {}, {}
            for i in range(3):
                p, t = _random_scene(rng, max_boxes=4)
                truths[f"im{i}"], preds[f"im{i}"] = t, p
            report = evaluate(truths, preds)
            expect = oracles.naive_evaluate(truths, preds)
            assert report.map50 == expect["map50"]
            assert report.precision == expect["precision"]
            assert report.recall == expect["recall"]

    def test_ap_invariant_under_monotone_confidence_rescaling(self):
        rng = random.Random(77)
        for _ in range(50):
            preds, truths = _random_scene(rng)
            rescaled = [ScoredDetection(p.box, p.class_id, p.confidence ** 3)
                        for p in preds]
            a = evaluate({"x": truths}, {"x": preds})
            b = evaluate({"x": truths}, {"x": rescaled})
            assert a.per_class_ap == b.per_class_ap
            assert a.map50 == b.map50

    def test_rates_in_range(self):
        rng = random.Random(9)
        for _ in range(50):
            preds, truths = _random_scene(rng)
            report = evaluate({"x": truths}, {"x": preds})
            for value in (report.precision, report.recall, report.map50, report.mean_iou):
                assert 0.0 <= value <= 1.0


def test_report_rendering_mentions_iou_definition():
    report = EvalReport(per_class_ap={0: 1.0}, map50=1.0, precision=1.0, recall=1.0,
                        mean_iou=1.0, tp=1, fp=0, fn=0, threshold=0.9)
    table = render_report_table(report)
    assert "Precision" in table and "IOU" in table
    assert "true-positive matches" in table  # footnote defining the IOU column
    kv = render_report_kv(report)
    assert "map50=1.0" in kv and "tp=1" in kv
