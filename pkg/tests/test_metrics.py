"""IoU, mIoU and report tests."""

import math

import numpy as np
import pytest

from src.cisslab.errors import ConfigurationError, InvalidLabelError, ShapeError
from src.cisslab.metrics import (
    ConfusionMatrix,
    MetricsReport,
    accumulate,
    iou_per_class,
    merge,
    miou,
    report,
)
from src.cisslab.schedule import TaskSchedule

A, B = 2, 3


def _cm(pred, gt, classes=(A, B)):
    return accumulate(ConfusionMatrix(classes), np.array(pred), np.array(gt))


def test_worked_example():
    cm = _cm([[A, B], [B, B]], [[A, A], [B, B]])
    ious = iou_per_class(cm)
    assert ious[A] == 0.5
    assert ious[B] == pytest.approx(2 / 3, abs=1e-15)
    assert miou(cm) == pytest.approx(7 / 12, abs=1e-15)
    assert 0 not in ious


def test_perfect_prediction_is_diagonal():
    gt = np.array([[0, A], [B, B]])
    cm = _cm(gt, gt)
    assert np.array_equal(cm.counts, np.diag(np.diag(cm.counts)))
    assert cm.total == 4
    assert miou(cm) == 1.0


def test_unknown_prediction_counts_as_background():
    cm = _cm(np.ones((3, 3), dtype=np.int64), np.zeros((3, 3), dtype=np.int64))
    assert iou_per_class(cm) == {0: 1.0}


def test_disjoint_masks_score_zero():
    cm = _cm([[A, 0]], [[0, A]])
    assert iou_per_class(cm)[A] == 0.0


def test_unknown_ground_truth_id():
    with pytest.raises(InvalidLabelError, match="ground truth"):
        _cm([[0, 0]], [[0, 9]])


def test_unknown_prediction_id():
    with pytest.raises(InvalidLabelError, match="prediction"):
        _cm([[7, 0]], [[0, 0]])


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        _cm([[0, 0]], [[0], [0]])


def test_empty_subset():
    with pytest.raises(ConfigurationError):
        miou(_cm([[A]], [[A]]), subset=[])


def test_unknown_not_in_evaluation_space():
    with pytest.raises(ConfigurationError):
        ConfusionMatrix((1, 2))


def _brute_force(pred, gt, classes):
    tp = {c: 0 for c in classes}
    fp = {c: 0 for c in classes}
    fn = {c: 0 for c in classes}
    for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
        p = 0 if p == 1 else p
        if p == g:
            tp[g] += 1
        else:
            fp[p] += 1
            fn[g] += 1
    return {c: (tp[c], tp[c] + fp[c] + fn[c]) for c in classes if tp[c] + fp[c] + fn[c] > 0}


def test_matches_brute_force_tally():
    rng = np.random.default_rng(3)
    for _ in range(100):
        classes = [0] + sorted(rng.choice(np.arange(2, 9), size=int(rng.integers(1, 5)), replace=False).tolist())
        gt = rng.choice(classes, size=(8, 8))
        pred = rng.choice(classes + [1], size=(8, 8))
        cm = accumulate(ConfusionMatrix(classes), pred, gt)
        expected = _brute_force(pred, gt, classes)
        ious = iou_per_class(cm)
        assert set(ious) == set(expected)
        n = len(cm.class_ids)
        for c, (tp, denom) in expected.items():
            i = cm.class_ids.index(c)
            tally = cm.counts[i, i] + cm.counts[:, i].sum() + cm.counts[i, :].sum() - 2 * cm.counts[i, i]
            assert (int(cm.counts[i, i]), int(tally)) == (tp, denom)
            assert ious[c] == tp / denom
        assert cm.counts.shape == (n, n)


def test_accumulation_order_does_not_matter():
    rng = np.random.default_rng(5)
    pairs = [(rng.choice([0, 1, A, B], (4, 4)), rng.choice([0, A, B], (4, 4))) for _ in range(6)]
    forward = ConfusionMatrix((A, B))
    for pred, gt in pairs:
        accumulate(forward, pred, gt)
    backward = ConfusionMatrix((A, B))
    for pred, gt in reversed(pairs):
        accumulate(backward, pred, gt)
    assert np.array_equal(forward.counts, backward.counts)
    parts = [accumulate(ConfusionMatrix((A, B)), p, g) for p, g in pairs]
    assert np.array_equal(merge(parts).counts, forward.counts)


def test_merge_rejects_mismatched_spaces():
    with pytest.raises(ShapeError):
        merge([ConfusionMatrix((A,)), ConfusionMatrix((A, B))])


SCHEDULE = TaskSchedule(tasks=(frozenset({A}), frozenset({B})))


def _two_step_report():
    first = _cm([[A, 0]], [[A, 0]], classes=(A,))
    second = _cm([[A, B], [0, B]], [[A, A], [0, B]])
    return report([first, second], SCHEDULE, meta={"name": "unit"})


def test_report_groups():
    rep = _two_step_report()
    second_cm = _cm([[A, B], [0, B]], [[A, A], [0, B]])
    first, final = rep.steps
    assert math.isnan(first.miou["new"])
    assert first.miou["all"] == 1.0
    assert final.miou["base"] == pytest.approx((1.0 + 0.5) / 2)
    assert final.miou["new"] == pytest.approx(0.5)
    assert final.miou["all"] == pytest.approx(miou(second_cm))
    assert final.pixels == second_cm.total


def test_single_class_report():
    cm = _cm([[A, A]], [[A, 0]], classes=(A,))
    rep = report([cm], TaskSchedule(tasks=(frozenset({A}),)))
    assert rep.final().iou[A] == 0.5


def test_report_json_round_trip():
    rep = _two_step_report()
    text = rep.to_json()
    assert '"new": null' in text
    again = MetricsReport.from_json(text)
    assert again.final().iou == rep.final().iou
    assert again.meta == {"name": "unit"}
    assert again.to_json() == text


def test_report_rejects_other_schema():
    data = _two_step_report().to_dict()
    data["schema_version"] = "99"
    with pytest.raises(ConfigurationError):
        MetricsReport.from_dict(data)


def test_report_csv():
    lines = _two_step_report().to_csv().splitlines()
    assert lines[0] == "step,class_id,iou"
    assert lines[1:3] == ["1,0,1.0", "1,2,1.0"]
    assert lines[-1].startswith("2,3,")
