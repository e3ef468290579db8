"""Background label augmentation tests."""

import itertools

import numpy as np
import pytest

from src.cisslab.errors import ConfigurationError, PreconditionError, ShapeError
from src.cisslab.heads import ScoreTensor
from src.cisslab.labelaug import (
    AugmentConfig,
    PrevModelOutput,
    augment_labels,
    confidence_map,
    previous_output,
    pseudo_label_count,
)

BG, UNK = 0, 1
PAST = [3]
CURRENT = [5]


def reference_label(y, salient, pred, mu, tau, use_saliency=True, has_prev=True):
    """Straight-line transcription of the augmentation rule for one pixel."""
    if y in CURRENT or y in PAST:
        return y
    if y == BG and has_prev and pred in PAST and mu > tau:
        return pred
    gate = salient == 1 or not use_saliency
    open_for_unknown = (not has_prev) or pred in (BG, UNK) or mu <= tau
    if y == BG and gate and open_for_unknown:
        return UNK
    return BG


def _one_pixel(y, salient, pred, mu, cfg):
    prev = PrevModelOutput(pred=np.array([[pred]]), confidence=np.array([[mu]]))
    return int(augment_labels(np.array([[y]]), np.array([[salient]]), prev, cfg, CURRENT, PAST)[0, 0])


@pytest.mark.parametrize("use_saliency", [True, False])
def test_exhaustive_branch_grid(use_saliency):
    tau, eps = 0.7, 1e-6
    cfg = AugmentConfig(tau=tau, use_saliency=use_saliency)
    for y, salient, pred, mu in itertools.product([BG, 5], [0, 1], [BG, UNK, 3], [tau - eps, tau + eps]):
        expected = reference_label(y, salient, pred, mu, tau, use_saliency)
        assert _one_pixel(y, salient, pred, mu, cfg) == expected, (y, salient, pred, mu)


def test_random_rasters_agree_with_reference():
    rng = np.random.default_rng(7)
    for trial in range(1000):
        tau = float(rng.choice([0.0, 0.3, 0.5, 0.7, 0.9, 1.0]))
        use_saliency = bool(rng.integers(2))
        cfg = AugmentConfig(tau=tau, use_saliency=use_saliency)
        shape = (4, 5)
        y = rng.choice([BG, BG, 3, 5], size=shape)
        salient = rng.integers(0, 2, size=shape)
        pred = rng.choice([BG, UNK, 3], size=shape)
        mu = rng.random(shape)
        prev = PrevModelOutput(pred=pred, confidence=mu)
        out = augment_labels(y, salient, prev, cfg, CURRENT, PAST)
        expected = np.vectorize(lambda a, s, p, m: reference_label(a, s, p, m, tau, use_saliency))(
            y, salient, pred, mu
        )
        assert np.array_equal(out, expected), trial


def test_first_task_salient_background_is_unknown():
    out = augment_labels(np.array([[0, 0, 5]]), np.array([[1, 0, 1]]), None, AugmentConfig(), CURRENT, [])
    assert out.tolist() == [[UNK, BG, 5]]


def test_confident_past_prediction_wins():
    assert _one_pixel(BG, 0, 3, 0.9, AugmentConfig()) == 3
    assert _one_pixel(BG, 1, 3, 0.9, AugmentConfig()) == 3


def test_salient_unknown_prediction():
    assert _one_pixel(BG, 1, UNK, 0.2, AugmentConfig()) == UNK


def test_unconfident_non_salient_stays_background():
    assert _one_pixel(BG, 0, 3, 0.5, AugmentConfig()) == BG


def test_ground_truth_never_modified():
    rng = np.random.default_rng(0)
    y = np.full((6, 6), 5)
    prev = PrevModelOutput(pred=np.full((6, 6), 3), confidence=np.ones((6, 6)))
    out = augment_labels(y, rng.integers(0, 2, (6, 6)), prev, AugmentConfig(tau=0.0), CURRENT, PAST)
    assert (out == 5).all()


def test_memory_ground_truth_beats_pseudo_label():
    prev = PrevModelOutput(pred=np.array([[3]]), confidence=np.array([[0.99]]))
    out = augment_labels(np.array([[3]]), np.array([[1]]), prev, AugmentConfig(), CURRENT, PAST)
    assert out[0, 0] == 3


def test_tau_one_disables_pseudo_labels():
    rng = np.random.default_rng(1)
    y = np.zeros((8, 8), dtype=np.int64)
    prev = PrevModelOutput(pred=np.full((8, 8), 3), confidence=rng.random((8, 8)) * (1 - 1e-12))
    out = augment_labels(y, np.ones_like(y), prev, AugmentConfig(tau=1.0), CURRENT, PAST)
    assert pseudo_label_count(out, y, PAST) == 0


def test_lower_tau_never_reduces_pseudo_labels():
    rng = np.random.default_rng(2)
    y = rng.choice([BG, 5], size=(10, 10))
    salient = rng.integers(0, 2, (10, 10))
    prev = PrevModelOutput(pred=rng.choice([BG, UNK, 3], size=(10, 10)), confidence=rng.random((10, 10)))
    counts = [
        pseudo_label_count(augment_labels(y, salient, prev, AugmentConfig(tau=tau), CURRENT, PAST), y, PAST)
        for tau in (1.0, 0.9, 0.7, 0.5, 0.3, 0.0)
    ]
    assert counts == sorted(counts)


def test_use_unknown_off():
    out = augment_labels(np.array([[0]]), np.array([[1]]), None, AugmentConfig(use_unknown=False), CURRENT, [])
    assert out[0, 0] == BG


def test_pseudo_labels_off():
    cfg = AugmentConfig(use_pseudo_labels=False)
    assert _one_pixel(BG, 0, 3, 0.9, cfg) == BG
    assert _one_pixel(BG, 1, 3, 0.5, cfg) == UNK
    # a confident past prediction no longer shields a salient pixel from the unknown rule
    assert _one_pixel(BG, 1, 3, 0.9, cfg) == UNK


@pytest.mark.parametrize("use_pseudo_labels", [True, False])
def test_first_task_without_previous_model(use_pseudo_labels):
    cfg = AugmentConfig(use_pseudo_labels=use_pseudo_labels)
    y = np.array([[0, 0, 5], [0, 5, 0]])
    out = augment_labels(y, np.array([[1, 0, 1], [1, 1, 0]]), None, cfg, CURRENT, [])
    assert out.tolist() == [[UNK, BG, 5], [UNK, 5, BG]]


def test_batch_axes_supported():
    y = np.zeros((2, 3, 3), dtype=np.int64)
    out = augment_labels(y, np.ones_like(y), None, AugmentConfig(), CURRENT, [])
    assert out.shape == (2, 3, 3)
    assert (out == UNK).all()


def test_missing_previous_output():
    with pytest.raises(PreconditionError):
        augment_labels(np.zeros((2, 2)), np.zeros((2, 2)), None, AugmentConfig(), CURRENT, PAST)


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        augment_labels(np.zeros((2, 2)), np.zeros((3, 2)), None, AugmentConfig(), CURRENT, [])


@pytest.mark.parametrize("tau", [-0.1, 1.1])
def test_tau_range(tau):
    with pytest.raises(ConfigurationError):
        AugmentConfig(tau=tau)


def _scores(values, class_ids=(0, 1, 2, 3)):
    return ScoreTensor(values=np.array(values, dtype=np.float64), class_ids=class_ids)


def test_confidence_of_past_scores():
    mu = confidence_map(_scores([[[5.0, 5.0, -1.0, 0.5]]]), [2, 3])
    assert mu[0, 0] == pytest.approx(1.0 / (1.0 + np.exp(-0.5)), abs=1e-12)
    assert mu[0, 0] == pytest.approx(0.62246, abs=1e-5)


def test_confidence_of_zero_scores():
    assert confidence_map(_scores([[[0.0, 0.0, 0.0, 0.0]]]), [2, 3])[0, 0] == 0.5


def test_confidence_ignores_dummy_classes():
    a = confidence_map(_scores([[[9.0, -9.0, 0.1, 0.2]]]), [2, 3])
    b = confidence_map(_scores([[[-9.0, 9.0, 0.1, 0.2]]]), [2, 3])
    assert a[0, 0] == b[0, 0]


def test_confidence_needs_past_classes():
    with pytest.raises(PreconditionError):
        confidence_map(_scores([[[0.0, 0.0, 0.0, 0.0]]]), [])


def test_previous_output_prediction_includes_dummy_classes():
    prev = previous_output(_scores([[[0.0, 3.0, 1.0, 2.0]]]), [2, 3])
    assert prev.pred[0, 0] == UNK
    assert 0.0 < prev.confidence[0, 0] < 1.0
