"""
Shared fixtures for the cisslab test suite.
"""

import numpy as np
import pytest

from src.cisslab.backbone import init_extractor
from src.cisslab.heads import TrainConfig
from src.cisslab.labelaug import AugmentConfig
from src.cisslab.scenario_config import preset, validate_config
from src.cisslab.schedule import TaskSchedule, make_schedule
from src.cisslab.synth import GeometryConfig


@pytest.fixture
def tiny_geometry():
    return GeometryConfig(height=16, width=16, min_objects=1, max_objects=2, min_size=5, max_size=9)


@pytest.fixture
def s8_schedule() -> TaskSchedule:
    return make_schedule(4, 2, 2, ordering_seed=0, catalog_size=8)


@pytest.fixture
def two_task_schedule() -> TaskSchedule:
    return TaskSchedule(tasks=(frozenset({2, 3}), frozenset({4})))


@pytest.fixture
def identity_extractor():
    return init_extractor(0, spec=[])


@pytest.fixture
def default_extractor():
    return init_extractor(0)


@pytest.fixture
def train_cfg():
    return TrainConfig(learning_rate=0.5, momentum=0.9, n_epochs=2, batch_size=4, seed=0)


@pytest.fixture
def augment_cfg():
    return AugmentConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_scenario(tmp_path):
    """A fast three-task scenario writing into tmp_path."""

    def _make(**overrides):
        data = preset("s8")
        data["data"] = {
            "train_scenes_per_task": 8,
            "eval_scenes": 6,
            "height": 16,
            "width": 16,
            "max_objects": 2,
        }
        data["train"] = {"n_epochs": 2, "batch_size": 4}
        data["memory"] = {"capacity": 8}
        data["output_dir"] = str(tmp_path / "run")
        for key, value in overrides.items():
            section, _, field = key.partition("__")
            if field:
                data.setdefault(section, {})[field] = value
            else:
                data[key] = value
        return validate_config(data)

    return _make
