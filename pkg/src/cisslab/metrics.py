#!/usr/bin/env python3
"""
Confusion matrices and IoU/mIoU.

The evaluation space is {background} ∪ C^{1:t}; predicted unknown pixels are
merged into background before counting. Reports group classes the usual way:
base (background + C_1), incremental (C_2..C_t) and all.
"""

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InvalidLabelError, ShapeError
from .schedule import BACKGROUND, UNKNOWN, TaskSchedule, class_groups

REPORT_SCHEMA_VERSION = "1"
GROUPS = ("base", "new", "all")


@dataclass
class ConfusionMatrix:
    """counts[g, p]: pixels with ground truth class_ids[g] predicted as class_ids[p]."""

    class_ids: tuple
    counts: np.ndarray = None

    def __post_init__(self):
        self.class_ids = tuple(sorted(set(int(c) for c in self.class_ids) | {BACKGROUND}))
        if UNKNOWN in self.class_ids:
            raise ConfigurationError("The evaluation space merges unknown into background")
        n = len(self.class_ids)
        if self.counts is None:
            self.counts = np.zeros((n, n), dtype=np.int64)
        elif self.counts.shape != (n, n):
            raise ShapeError(f"Counts {self.counts.shape} do not match {n} classes")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def copy(self) -> "ConfusionMatrix":
        return ConfusionMatrix(class_ids=self.class_ids, counts=self.counts.copy())


def _index(cm: ConfusionMatrix, raster: np.ndarray, role: str) -> np.ndarray:
    ids = np.asarray(cm.class_ids, dtype=np.int64)
    positions = np.searchsorted(ids, raster)
    positions = np.clip(positions, 0, len(ids) - 1)
    bad = np.argwhere(ids[positions] != raster)
    if bad.size:
        pixel = tuple(int(i) for i in bad[0])
        raise InvalidLabelError(pixel, int(raster[pixel]), ids, role=role)
    return positions


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, gt: np.ndarray) -> ConfusionMatrix:
    """Add one (pred, gt) pair into ``cm`` and return it."""
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ShapeError(f"Prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    pred = np.where(pred == UNKNOWN, BACKGROUND, pred)
    g = _index(cm, gt, "ground truth")
    p = _index(cm, pred, "prediction")
    n = len(cm.class_ids)
    cm.counts += np.bincount((g * n + p).ravel(), minlength=n * n).reshape(n, n)
    return cm


def merge(matrices: Iterable[ConfusionMatrix]) -> ConfusionMatrix:
    matrices = list(matrices)
    if not matrices:
        raise ConfigurationError("Nothing to merge")
    result = matrices[0].copy()
    for cm in matrices[1:]:
        if cm.class_ids != result.class_ids:
            raise ShapeError(f"Cannot merge matrices over {cm.class_ids} and {result.class_ids}")
        result.counts += cm.counts
    return result


def iou_per_class(cm: ConfusionMatrix) -> Dict[int, float]:
    """IoU for every class with a nonzero denominator (in gt or predicted)."""
    tp = np.diag(cm.counts)
    fp = cm.counts.sum(axis=0) - tp
    fn = cm.counts.sum(axis=1) - tp
    denom = tp + fp + fn
    return {c: float(tp[i] / denom[i]) for i, c in enumerate(cm.class_ids) if denom[i] > 0}


def miou(cm: ConfusionMatrix, subset: Optional[Iterable[int]] = None) -> float:
    """Mean IoU over ``subset`` (all classes by default); classes with no pixels anywhere are skipped."""
    wanted = cm.class_ids if subset is None else [int(c) for c in subset]
    if not wanted:
        raise ConfigurationError("mIoU over an empty class subset")
    ious = iou_per_class(cm)
    values = [ious[c] for c in wanted if c in ious]
    return float(np.mean(values)) if values else float("nan")


@dataclass
class StepMetrics:
    step: int
    classes: List[int]
    iou: Dict[int, float]
    miou: Dict[str, float]
    pixels: int
    extra: Dict[str, object] = field(default_factory=dict)


@dataclass
class MetricsReport:
    steps: List[StepMetrics] = field(default_factory=list)
    meta: Dict[str, object] = field(default_factory=dict)
    schema_version: str = REPORT_SCHEMA_VERSION

    def final(self) -> StepMetrics:
        return self.steps[-1]

    def to_dict(self) -> dict:
        payload = asdict(self)
        for step in payload["steps"]:
            step["iou"] = {str(c): v for c, v in step["iou"].items()}
        return payload

    def to_json(self) -> str:
        return json.dumps(_nan_to_none(self.to_dict()), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        version = str(data.get("schema_version", ""))
        if version != REPORT_SCHEMA_VERSION:
            raise ConfigurationError(f"Unsupported report schema version {version!r}")
        steps = []
        for raw in data.get("steps", []):
            steps.append(
                StepMetrics(
                    step=int(raw["step"]),
                    classes=[int(c) for c in raw["classes"]],
                    iou={int(c): float(v) for c, v in raw["iou"].items()},
                    miou={k: (float("nan") if v is None else float(v)) for k, v in raw["miou"].items()},
                    pixels=int(raw["pixels"]),
                    extra=dict(raw.get("extra", {})),
                )
            )
        return cls(steps=steps, meta=dict(data.get("meta", {})), schema_version=version)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["step", "class_id", "iou"])
        for step in self.steps:
            for c in sorted(step.iou):
                writer.writerow([step.step, c, repr(step.iou[c])])
        return buffer.getvalue()


def _nan_to_none(value):
    if isinstance(value, float) and np.isnan(value):
        return None
    if isinstance(value, dict):
        return {k: _nan_to_none(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_nan_to_none(v) for v in value]
    return value


def step_metrics(cm: ConfusionMatrix, schedule: TaskSchedule, t: int) -> StepMetrics:
    groups = class_groups(schedule, t)
    ious = iou_per_class(cm)
    grouped = {}
    for name in GROUPS:
        members = groups[name]
        grouped[name] = miou(cm, members) if members else float("nan")
    return StepMetrics(step=t, classes=list(cm.class_ids), iou=ious, miou=grouped, pixels=cm.total)


def report(matrices: Sequence[ConfusionMatrix], schedule: TaskSchedule, meta: Optional[dict] = None) -> MetricsReport:
    """One StepMetrics per matrix, matrices[k] being the evaluation after step k + 1."""
    steps = [step_metrics(cm, schedule, t) for t, cm in enumerate(matrices, start=1)]
    return MetricsReport(steps=steps, meta=dict(meta or {}))
