"""
cisslab - Class-Incremental Semantic Segmentation Lab

Unknown-class background modelling, confidence-thresholded pseudo-labels,
frozen-backbone sigmoid heads, weight transfer and a tiny class-balanced
exemplar memory, run end to end on a deterministic synthetic benchmark.
"""

__version__ = "1.0.0"
__author__ = "cisslab Contributors"
__description__ = "Class-incremental semantic segmentation lab on synthetic scenes"

from .heads import SegModel, TrainConfig, begin_task, predict
from .labelaug import AugmentConfig, augment_labels
from .memory import ExemplarMemory
from .metrics import ConfusionMatrix, MetricsReport
from .scenario_config import ScenarioConfig, load_scenario
from .schedule import TaskSchedule, make_schedule
from .structured_logger import get_logger
from .trainer import train_task

__all__ = [
    "AugmentConfig",
    "ConfusionMatrix",
    "ExemplarMemory",
    "MetricsReport",
    "ScenarioConfig",
    "SegModel",
    "TaskSchedule",
    "TrainConfig",
    "augment_labels",
    "begin_task",
    "get_logger",
    "load_scenario",
    "make_schedule",
    "predict",
    "train_task",
]
