#!/usr/bin/env python3
"""
Per-class linear heads over frozen features.

Each class c in Y^t = {c_b, c_u} ∪ C^{1:t} owns a 1x1 classifier (weight
vector + bias). Scores are s_ic = <w_c, feat_i> + b_c. Both losses return
hand-derived gradients with respect to the scores; the trainer chains them
into head parameters.
"""

import hashlib
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .backbone import Extractor, extract
from .errors import ConfigurationError, InvalidLabelError, ShapeError
from .schedule import BACKGROUND, DUMMY_CLASSES, UNKNOWN
from .structured_logger import get_logger

log = get_logger(__name__)

LOSS_KINDS = ("sigmoid_bce", "softmax_ce")
HEAD_INITS = ("weight_transfer", "random", "from_cb")


@dataclass
class HeadParams:
    """phi_c: weight vector, bias and freeze flag of one class."""

    weight: np.ndarray
    bias: float
    frozen: bool = False

    def copy(self, frozen: Optional[bool] = None) -> "HeadParams":
        return HeadParams(
            weight=self.weight.copy(), bias=float(self.bias), frozen=self.frozen if frozen is None else frozen
        )


@dataclass
class TrainConfig:
    """Optimizer, loss and head-initialisation settings for one task."""

    learning_rate: float = 1e-2
    momentum: float = 0.9
    n_epochs: int = 4
    batch_size: int = 8
    loss_kind: str = "sigmoid_bce"
    freeze: bool = True
    head_init: str = "weight_transfer"
    seed: int = 0
    init_std: float = 0.01

    def validate(self, memory_active: bool = False) -> "TrainConfig":
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.n_epochs < 0:
            raise ConfigurationError(f"n_epochs must be >= 0, got {self.n_epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if memory_active and self.batch_size % 2:
            raise ConfigurationError(f"batch_size must be even when memory is active, got {self.batch_size}")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigurationError(f"Unknown loss_kind {self.loss_kind!r}; choose from {LOSS_KINDS}")
        if self.head_init not in HEAD_INITS:
            raise ConfigurationError(f"Unknown head_init {self.head_init!r}; choose from {HEAD_INITS}")
        return self


@dataclass
class ScoreTensor:
    """Scores (..., |Y^t|) with the class id of every column, ascending."""

    values: np.ndarray
    class_ids: Tuple[int, ...]

    def column(self, class_id: int) -> np.ndarray:
        return self.values[..., self.class_ids.index(class_id)]

    def select(self, class_ids: Iterable[int]) -> np.ndarray:
        cols = [self.class_ids.index(int(c)) for c in sorted(class_ids)]
        return self.values[..., cols]


@dataclass
class SegModel:
    """f_theta: frozen extractor plus one head per class of Y^t."""

    extractor: Extractor
    heads: Dict[int, HeadParams] = field(default_factory=dict)
    task_index: int = 0

    @property
    def class_ids(self) -> Tuple[int, ...]:
        return tuple(sorted(self.heads))

    @property
    def feature_dim(self) -> int:
        return self.extractor.output_dim

    @property
    def foreground_ids(self) -> List[int]:
        return [c for c in self.class_ids if c not in DUMMY_CLASSES]

    def weight_matrix(self) -> np.ndarray:
        return np.stack([self.heads[c].weight for c in self.class_ids], axis=1)

    def bias_vector(self) -> np.ndarray:
        return np.array([self.heads[c].bias for c in self.class_ids], dtype=np.float64)

    def trainable_mask(self) -> np.ndarray:
        return np.array([not self.heads[c].frozen for c in self.class_ids])

    def copy(self) -> "SegModel":
        return SegModel(
            extractor=self.extractor,
            heads={c: h.copy() for c, h in self.heads.items()},
            task_index=self.task_index,
        )

    def digest(self, class_ids: Optional[Iterable[int]] = None, include_extractor: bool = True) -> str:
        """SHA-256 over the extractor and the selected heads (all heads by default)."""
        h = hashlib.sha256()
        if include_extractor:
            h.update(self.extractor.digest().encode())
        selected = self.class_ids if class_ids is None else sorted(int(c) for c in class_ids)
        for c in selected:
            head = self.heads[c]
            h.update(f"head:{c}".encode())
            h.update(np.ascontiguousarray(head.weight, dtype=np.float64).tobytes())
            h.update(np.float64(head.bias).tobytes())
        return h.hexdigest()


def freeze_digest(model: SegModel, past_foreground: Iterable[int]) -> str:
    """Digest of everything that must stay fixed while learning step t >= 2."""
    return model.digest(past_foreground, include_extractor=True)


def _random_head(rng: np.random.Generator, dim: int, std: float) -> HeadParams:
    return HeadParams(weight=rng.normal(0.0, std, size=dim), bias=0.0)


def init_model(extractor: Extractor, seed: int = 0, init_std: float = 0.01) -> SegModel:
    """Model before the first task: the extractor plus c_b and c_u heads."""
    rng = np.random.default_rng([seed, 0])
    heads = {
        BACKGROUND: _random_head(rng, extractor.output_dim, init_std),
        UNKNOWN: _random_head(rng, extractor.output_dim, init_std),
    }
    return SegModel(extractor=extractor, heads=heads, task_index=0)


def forward(model: SegModel, features: np.ndarray) -> ScoreTensor:
    """s_ic = <w_c, feat_i> + b_c for every head; features may carry leading batch axes."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != model.feature_dim:
        raise ShapeError(f"Features have dim {features.shape[-1]}, heads expect {model.feature_dim}")
    values = features @ model.weight_matrix() + model.bias_vector()
    return ScoreTensor(values=values, class_ids=model.class_ids)


def argmax_labels(scores: ScoreTensor) -> np.ndarray:
    """Per-pixel argmax; columns are ascending ids so ties go to the smallest id."""
    ids = np.asarray(scores.class_ids, dtype=np.int64)
    return ids[np.argmax(scores.values, axis=-1)]


def predict(model: SegModel, image: np.ndarray) -> np.ndarray:
    """argmax over all of Y^t, c_b and c_u included."""
    return argmax_labels(forward(model, extract(model.extractor, image)))


def _target_columns(scores: ScoreTensor, target: np.ndarray) -> np.ndarray:
    target = np.asarray(target)
    if target.shape != scores.values.shape[:-1]:
        raise ShapeError(f"Target shape {target.shape} does not match scores {scores.values.shape[:-1]}")
    ids = np.asarray(scores.class_ids, dtype=np.int64)
    lookup = np.full(max(int(ids.max()), int(target.max(initial=0))) + 1, -1, dtype=np.int64)
    lookup[ids] = np.arange(len(ids))
    safe = np.clip(target, 0, None).astype(np.int64)
    columns = np.where(target >= 0, lookup[safe], -1)
    bad = np.argwhere(columns < 0)
    if bad.size:
        pixel = tuple(bad[0])
        raise InvalidLabelError(pixel, target[pixel], ids)
    return columns


def _one_hot(columns: np.ndarray, n_classes: int) -> np.ndarray:
    return np.eye(n_classes, dtype=np.float64)[columns]


def sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -np.asarray(x, dtype=np.float64)))


def bce_loss_grad(scores: ScoreTensor, target: np.ndarray) -> Tuple[float, ScoreTensor]:
    """
    Sigmoid + binary cross-entropy, averaged over pixels and classes.

    dL/ds_ic = (sigma(s_ic) - 1{c = y_i}) / (N * |Y|).
    """
    s = scores.values
    y = _one_hot(_target_columns(scores, target), s.shape[-1])
    # -[y log sigma(s) + (1 - y) log(1 - sigma(s))] = softplus(s) - y * s
    loss = float(np.mean(np.logaddexp(0.0, s) - y * s))
    grad = (sigmoid(s) - y) / s.size
    return loss, ScoreTensor(values=grad, class_ids=scores.class_ids)


def softmax(s: np.ndarray) -> np.ndarray:
    shifted = s - s.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def ce_loss_grad(scores: ScoreTensor, target: np.ndarray) -> Tuple[float, ScoreTensor]:
    """
    Softmax + cross-entropy, averaged over pixels.

    dL/ds_ic = (p_ic - 1{c = y_i}) / N.
    """
    s = scores.values
    columns = _target_columns(scores, target)
    y = _one_hot(columns, s.shape[-1])
    log_z = np.logaddexp.reduce(s, axis=-1, keepdims=True)
    log_p = s - log_z
    n_pixels = s.size // s.shape[-1]
    loss = float(-np.sum(log_p * y) / n_pixels)
    grad = (np.exp(log_p) - y) / n_pixels
    return loss, ScoreTensor(values=grad, class_ids=scores.class_ids)


LOSSES = {"sigmoid_bce": bce_loss_grad, "softmax_ce": ce_loss_grad}


def begin_task(model: SegModel, new_classes: Iterable[int], cfg: TrainConfig) -> SegModel:
    """
    Prepare the model for the next task.

    t = 1: new heads are drawn at random and every head trains. t >= 2: past
    foreground heads freeze (when cfg.freeze), c_b and c_u keep their values and
    stay trainable, and each new head starts from c_u (weight transfer), c_b, or
    a seeded random draw.
    """
    new = sorted(int(c) for c in new_classes)
    if not new:
        raise ConfigurationError("A task needs at least one new class")
    duplicates = [c for c in new if c in model.heads or c in DUMMY_CLASSES]
    if duplicates or len(set(new)) != len(new):
        raise ConfigurationError(f"Classes already have heads: {duplicates or new}")

    t = model.task_index + 1
    result = model.copy()
    result.task_index = t
    rng = np.random.default_rng([cfg.seed, t, 1])

    if t == 1:
        for head in result.heads.values():
            head.frozen = False
        for c in new:
            result.heads[c] = _random_head(rng, model.feature_dim, cfg.init_std)
    else:
        for c in result.foreground_ids:
            result.heads[c].frozen = cfg.freeze
        result.heads[BACKGROUND].frozen = False
        result.heads[UNKNOWN].frozen = False
        for c in new:
            if cfg.head_init == "weight_transfer":
                result.heads[c] = model.heads[UNKNOWN].copy(frozen=False)
            elif cfg.head_init == "from_cb":
                result.heads[c] = model.heads[BACKGROUND].copy(frozen=False)
            else:
                result.heads[c] = _random_head(rng, model.feature_dim, cfg.init_std)

    log.info(
        "Task initialised",
        extra={
            "task": t,
            "new_classes": new,
            "head_init": cfg.head_init if t > 1 else "random",
            "frozen_heads": [c for c in result.class_ids if result.heads[c].frozen],
        },
    )
    return result
