#!/usr/bin/env python3
"""
Task training loop.

For each epoch, D_t is shuffled by a seeded generator and cut into batches.
With an exemplar memory, each batch holds K/2 task samples plus K/2 memory
draws; without one, K task samples. Both halves are label-augmented, the loss
runs over every head, and the momentum SGD update touches only unfrozen heads.
"""

import hashlib
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .backbone import Extractor, extract
from .errors import PreconditionError
from .heads import LOSSES, ScoreTensor, SegModel, TrainConfig, forward
from .labelaug import AugmentConfig, augment_labels, previous_output, pseudo_label_count
from .memory import ExemplarMemory, sample_half_batch
from .structured_logger import get_logger

log = get_logger(__name__)


class FeatureStore:
    """Caches extractor output per image; valid because the extractor never changes."""

    def __init__(self, extractor: Extractor):
        self.extractor = extractor
        self._cache: Dict[bytes, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._cache)

    def get(self, image: np.ndarray) -> np.ndarray:
        key = hashlib.blake2b(np.ascontiguousarray(image).tobytes(), digest_size=16).digest()
        features = self._cache.get(key)
        if features is None:
            features = extract(self.extractor, image)
            features.setflags(write=False)
            self._cache[key] = features
        return features


class MomentumSGD:
    """Heavy-ball SGD over the head matrix; frozen columns never move."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, trainable: np.ndarray, lr: float, momentum: float):
        self.weight = weight
        self.bias = bias
        self.trainable = trainable
        self.lr = lr
        self.momentum = momentum
        self.v_weight = np.zeros_like(weight)
        self.v_bias = np.zeros_like(bias)

    def step(self, grad_weight: np.ndarray, grad_bias: np.ndarray):
        # gradients of frozen heads are computed but discarded here
        cols = self.trainable
        self.v_weight[:, cols] = self.momentum * self.v_weight[:, cols] + grad_weight[:, cols]
        self.v_bias[cols] = self.momentum * self.v_bias[cols] + grad_bias[cols]
        self.weight[:, cols] -= self.lr * self.v_weight[:, cols]
        self.bias[cols] -= self.lr * self.v_bias[cols]


def _stack(store: FeatureStore, items: Sequence) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    features = np.stack([store.get(item.scene.image) for item in items])
    labels = np.stack([item.labels for item in items])
    saliency = np.stack([item.saliency for item in items])
    return features, labels, saliency


def head_gradients(features: np.ndarray, grad_scores: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Chain dL/ds into dL/dW (D, C) and dL/db (C,) with a fixed summation order."""
    d = features.shape[-1]
    c = grad_scores.shape[-1]
    flat_f = features.reshape(-1, d)
    flat_g = grad_scores.reshape(-1, c)
    return flat_f.T @ flat_g, flat_g.sum(axis=0)


def train_task(
    model: SegModel,
    task_data: Sequence,
    memory: Optional[ExemplarMemory],
    cfg: TrainConfig,
    augment_cfg: AugmentConfig,
    prev_model: Optional[SegModel],
    feature_store: Optional[FeatureStore] = None,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> SegModel:
    """Train the heads of ``model`` (already prepared by begin_task) on D_t."""
    t = model.task_index
    if t >= 2 and prev_model is None:
        raise PreconditionError(f"Task {t} needs the previous model for pseudo-labelling")
    if t == 1 and prev_model is not None:
        raise PreconditionError("Task 1 has no previous model")
    if t >= 2 and memory is not None and len(memory) == 0:
        raise PreconditionError(f"Exemplar memory is empty at task {t}; it must be updated after task {t - 1}")
    if not task_data:
        raise PreconditionError(f"Task {t} has no training data")
    if not model.extractor.frozen:
        raise PreconditionError("Extractor weights must be read-only")

    memory_active = memory is not None and t >= 2
    cfg.validate(memory_active=memory_active)
    store = feature_store or FeatureStore(model.extractor)

    past = sorted(prev_model.foreground_ids) if prev_model is not None else []
    current = sorted(set(model.foreground_ids) - set(past))

    trained = model.copy()
    weight = trained.weight_matrix()
    bias = trained.bias_vector()
    optimizer = MomentumSGD(weight, bias, trained.trainable_mask(), cfg.learning_rate, cfg.momentum)
    loss_grad = LOSSES[cfg.loss_kind]

    task_batch = cfg.batch_size // 2 if memory_active else cfg.batch_size
    rng = np.random.default_rng([cfg.seed, t, 2])
    step = 0
    for epoch in range(1, cfg.n_epochs + 1):
        order = rng.permutation(len(task_data))
        losses: List[float] = []
        pseudo_labels = 0
        for start in range(0, len(order), task_batch):
            items = [task_data[int(i)] for i in order[start : start + task_batch]]
            if memory_active:
                items = items + sample_half_batch(memory, cfg.batch_size // 2, seed=cfg.seed + 7919 * t, step=step)
            features, labels, saliency = _stack(store, items)

            prev = None
            if prev_model is not None:
                prev = previous_output(forward(prev_model, features), past)
            target = augment_labels(labels, saliency, prev, augment_cfg, current, past)
            if past:
                pseudo_labels += pseudo_label_count(target, labels, past)

            scores = ScoreTensor(values=features @ weight + bias, class_ids=trained.class_ids)
            loss, grad = loss_grad(scores, target)
            grad_weight, grad_bias = head_gradients(features, grad.values)
            optimizer.step(grad_weight, grad_bias)
            losses.append(loss)
            step += 1

        record = {
            "task": t,
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "lr": cfg.learning_rate,
            "batches": len(losses),
            "pseudo_labels": pseudo_labels,
        }
        log.info("epoch complete", extra=record)
        if on_epoch is not None:
            on_epoch(record)

    for column, class_id in enumerate(trained.class_ids):
        head = trained.heads[class_id]
        if head.frozen:
            continue
        head.weight = weight[:, column].copy()
        head.bias = float(bias[column])
    return trained
