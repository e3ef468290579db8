#!/usr/bin/env python3
"""
Background label augmentation.

Turns a task-time label raster (background + current classes) into the
augmented target over Y^t. Per pixel, first match wins:

  (a) ground truth of a current class (or a past class, for memory samples)
  (b) confident pseudo-label from the previous model: mu > tau
  (c) unknown, for salient background (or any background without saliency)
  (d) background
"""

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigurationError, PreconditionError, ShapeError
from .heads import ScoreTensor, argmax_labels, sigmoid
from .schedule import BACKGROUND, DUMMY_CLASSES, UNKNOWN


@dataclass(frozen=True)
class AugmentConfig:
    tau: float = 0.7
    use_saliency: bool = True
    use_unknown: bool = True
    use_pseudo_labels: bool = True

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigurationError(f"tau must be in [0, 1], got {self.tau}")


@dataclass
class PrevModelOutput:
    """Prediction of f^{t-1} over Y^{t-1} and the past-foreground confidence mu."""

    pred: np.ndarray
    confidence: np.ndarray


def _ids(values: Iterable[int]) -> np.ndarray:
    return np.fromiter((int(v) for v in values), dtype=np.int64)


def confidence_map(prev_scores: ScoreTensor, past_foreground: Iterable[int]) -> np.ndarray:
    """mu_i = max over past foreground classes of sigmoid(score); c_b and c_u never count."""
    past = sorted(int(c) for c in past_foreground if int(c) not in DUMMY_CLASSES)
    if not past:
        raise PreconditionError("Confidence needs at least one past foreground class (t >= 2)")
    missing = [c for c in past if c not in prev_scores.class_ids]
    if missing:
        raise ShapeError(f"Scores do not cover past classes {missing}")
    return sigmoid(prev_scores.select(past).max(axis=-1))


def previous_output(prev_scores: ScoreTensor, past_foreground: Iterable[int]) -> PrevModelOutput:
    return PrevModelOutput(pred=argmax_labels(prev_scores), confidence=confidence_map(prev_scores, past_foreground))


def augment_labels(
    y: np.ndarray,
    saliency: np.ndarray,
    prev: Optional[PrevModelOutput],
    cfg: AugmentConfig,
    current_classes: Iterable[int],
    past_foreground: Iterable[int],
) -> np.ndarray:
    """Augmented target over {c_b, c_u} ∪ past_foreground ∪ current_classes."""
    y = np.asarray(y)
    saliency = np.asarray(saliency)
    if saliency.shape != y.shape:
        raise ShapeError(f"Saliency {saliency.shape} and labels {y.shape} differ in shape")
    past = _ids(c for c in past_foreground if int(c) not in DUMMY_CLASSES)
    current = _ids(current_classes)
    if past.size and prev is None:
        raise PreconditionError("Previous model output is required once past classes exist (t >= 2)")
    if prev is not None and (prev.pred.shape != y.shape or prev.confidence.shape != y.shape):
        raise ShapeError(f"Previous output {prev.pred.shape} and labels {y.shape} differ in shape")

    out = np.full(y.shape, BACKGROUND, dtype=np.int64)
    is_bg = y == BACKGROUND
    assigned = np.isin(y, np.concatenate([current, past]))
    out[assigned] = y[assigned]

    pseudo = np.zeros(y.shape, dtype=bool)
    open_for_unknown = np.ones(y.shape, dtype=bool)
    # with pseudo-labels off, rule (b) is skipped and every pixel stays open to (c)
    if cfg.use_pseudo_labels and prev is not None and past.size:
        confident = prev.confidence > cfg.tau
        pseudo = is_bg & np.isin(prev.pred, past) & confident
        # below-threshold or dummy predictions leave the pixel open to the unknown rule
        open_for_unknown = np.isin(prev.pred, list(DUMMY_CLASSES)) | ~confident
        out[pseudo] = prev.pred[pseudo]

    if cfg.use_unknown:
        gate = (saliency == 1) if cfg.use_saliency else np.ones(y.shape, dtype=bool)
        unknown = is_bg & ~pseudo & gate & open_for_unknown
        out[unknown] = UNKNOWN
    return out


def pseudo_label_count(augmented: np.ndarray, y: np.ndarray, past_foreground: Iterable[int]) -> int:
    """Pixels that were background in ``y`` and carry a past class after augmentation."""
    return int(np.sum((np.asarray(y) == BACKGROUND) & np.isin(augmented, _ids(past_foreground))))
