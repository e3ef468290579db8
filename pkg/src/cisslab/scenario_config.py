#!/usr/bin/env python3
"""
Scenario configuration files.

A scenario is described by a JSON or YAML document validated with pydantic.
Built-in presets cover the toy schedules; ``--set dotted.key=value`` overrides
apply on top of a preset or a file before validation.
"""

import copy
import json
import os
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigurationError
from .heads import TrainConfig
from .labelaug import AugmentConfig
from .schedule import TaskSchedule, base_schedule, joint_schedule, make_schedule
from .synth import GeometryConfig

SCHEMA_VERSION = "1"
METHODS = ("ssul", "ssul_m", "joint")

# Tags for seeds derived from the master seed.
SEED_TAGS = {"dataset": 1, "eval": 2, "train": 3, "memory": 4, "extractor": 5}


class _Spec(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ScheduleSpec(_Spec):
    base: int = Field(4, ge=1)
    step: int = Field(2, ge=1)
    num_steps: int = Field(2, ge=0)
    ordering_seed: int = 0
    catalog_size: int = Field(8, ge=1)

    def build(self) -> TaskSchedule:
        if self.num_steps == 0:
            return base_schedule(self.base, self.ordering_seed, self.catalog_size)
        return make_schedule(self.base, self.step, self.num_steps, self.ordering_seed, self.catalog_size)


class DataSpec(_Spec):
    protocol: Literal["overlapped", "disjoint"] = "overlapped"
    train_scenes_per_task: int = Field(32, ge=1)
    eval_scenes: int = Field(32, ge=1)
    height: int = Field(32, ge=8)
    width: int = Field(32, ge=8)
    min_objects: int = Field(1, ge=1)
    max_objects: int = Field(3, ge=1)
    class_skew: float = Field(0.0, ge=0.0)
    dataset_seed: Optional[int] = None
    eval_seed: Optional[int] = None

    def geometry(self) -> GeometryConfig:
        return GeometryConfig(
            height=self.height,
            width=self.width,
            min_objects=self.min_objects,
            max_objects=self.max_objects,
            class_skew=self.class_skew,
        ).validate()


class AugmentSpec(_Spec):
    tau: float = Field(0.7, ge=0.0, le=1.0)
    use_saliency: bool = True
    use_unknown: bool = True
    use_pseudo_labels: bool = True
    saliency_corruption: float = Field(0.0, ge=0.0, le=1.0)


class TrainSpec(_Spec):
    learning_rate: float = Field(20.0, gt=0.0)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    n_epochs: int = Field(30, ge=1)
    batch_size: int = Field(4, ge=1)
    loss_kind: Literal["sigmoid_bce", "softmax_ce"] = "sigmoid_bce"
    freeze: bool = True
    head_init: Literal["weight_transfer", "random", "from_cb"] = "weight_transfer"
    init_std: float = Field(0.01, ge=0.0)
    extractor: Literal["default", "identity"] = "default"
    seed: Optional[int] = None


class MemorySpec(_Spec):
    capacity: int = Field(20, ge=0)
    sampling: Literal["class_balanced", "random"] = "class_balanced"
    seed: Optional[int] = None
    spill: bool = False


class AblationSpec(_Spec):
    no_unknown: bool = False
    no_freeze: bool = False
    softmax_ce: bool = False
    head_init: Optional[Literal["weight_transfer", "random", "from_cb"]] = None


class ScenarioConfig(_Spec):
    schema_version: Literal["1"] = SCHEMA_VERSION
    name: str = "s8"
    seed: int = 0
    method: Literal["ssul", "ssul_m", "joint"] = "ssul"
    schedule: ScheduleSpec = Field(default_factory=ScheduleSpec)
    data: DataSpec = Field(default_factory=DataSpec)
    augment: AugmentSpec = Field(default_factory=AugmentSpec)
    train: TrainSpec = Field(default_factory=TrainSpec)
    memory: MemorySpec = Field(default_factory=MemorySpec)
    ablation: AblationSpec = Field(default_factory=AblationSpec)
    output_dir: Optional[str] = None
    save_checkpoints: bool = True

    @model_validator(mode="after")
    def _consistent(self) -> "ScenarioConfig":
        if self.data.min_objects > self.data.max_objects:
            raise ValueError("data.min_objects must not exceed data.max_objects")
        if self.uses_memory and self.train.batch_size % 2:
            raise ValueError("train.batch_size must be even when the exemplar memory is active")
        return self

    @property
    def uses_memory(self) -> bool:
        return self.method == "ssul_m" and self.memory.capacity > 0

    def derived_seed(self, tag: str) -> int:
        explicit = {
            "dataset": self.data.dataset_seed,
            "eval": self.data.eval_seed,
            "train": self.train.seed,
            "memory": self.memory.seed,
        }.get(tag)
        if explicit is not None:
            return int(explicit)
        return int(np.random.SeedSequence([self.seed, SEED_TAGS[tag]]).generate_state(1)[0])

    def resolved(self) -> "ResolvedScenario":
        """Concrete module configs with every ablation toggle applied."""
        ablation = self.ablation
        head_init = ablation.head_init or self.train.head_init
        use_unknown = self.augment.use_unknown and not ablation.no_unknown
        if not use_unknown and head_init == "weight_transfer":
            head_init = "random"
        schedule = self.schedule.build()
        if self.method == "joint":
            schedule = joint_schedule(schedule)
        train_cfg = TrainConfig(
            learning_rate=self.train.learning_rate,
            momentum=self.train.momentum,
            n_epochs=self.train.n_epochs,
            batch_size=self.train.batch_size,
            loss_kind="softmax_ce" if ablation.softmax_ce else self.train.loss_kind,
            freeze=self.train.freeze and not ablation.no_freeze,
            head_init=head_init,
            seed=self.derived_seed("train"),
            init_std=self.train.init_std,
        ).validate(memory_active=self.uses_memory)
        augment_cfg = AugmentConfig(
            tau=self.augment.tau,
            use_saliency=self.augment.use_saliency,
            use_unknown=use_unknown,
            use_pseudo_labels=self.augment.use_pseudo_labels,
        )
        return ResolvedScenario(
            schedule=schedule,
            geometry=self.data.geometry(),
            augment=augment_cfg,
            train=train_cfg,
            memory_capacity=self.memory.capacity if self.uses_memory else 0,
            memory_sampling=self.memory.sampling,
            dataset_seed=self.derived_seed("dataset"),
            eval_seed=self.derived_seed("eval"),
            memory_seed=self.derived_seed("memory"),
            extractor_seed=self.derived_seed("extractor"),
        )

    def fingerprint(self) -> str:
        """Stable text of the config without the output location, used to match checkpoints to runs."""
        return json.dumps(self.model_dump(exclude={"output_dir"}), sort_keys=True)


@dataclass(frozen=True)
class ResolvedScenario:
    schedule: TaskSchedule
    geometry: GeometryConfig
    augment: AugmentConfig
    train: TrainConfig
    memory_capacity: int
    memory_sampling: str
    dataset_seed: int
    eval_seed: int
    memory_seed: int
    extractor_seed: int


PRESETS: Dict[str, Dict[str, Any]] = {
    "s8": {
        "name": "s8",
        "schedule": {"base": 4, "step": 2, "num_steps": 2, "catalog_size": 8},
        "memory": {"capacity": 16},
    },
    "s16": {
        "name": "s16",
        "schedule": {"base": 8, "step": 2, "num_steps": 4, "catalog_size": 16},
        "data": {"train_scenes_per_task": 40, "eval_scenes": 48},
        "memory": {"capacity": 32},
    },
    "s15_1": {
        "name": "s15_1",
        "schedule": {"base": 15, "step": 1, "num_steps": 5, "catalog_size": 20},
        "data": {"train_scenes_per_task": 40, "eval_scenes": 60},
        "memory": {"capacity": 40},
    },
}


def preset(name: str) -> Dict[str, Any]:
    if name not in PRESETS:
        raise ConfigurationError(f"Unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])


def read_config_file(path: str) -> Dict[str, Any]:
    """Raw mapping from a .json, .yaml or .yml file."""
    if not os.path.exists(path):
        raise ConfigurationError(f"Config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            if path.endswith((".yaml", ".yml")):
                data = yaml.safe_load(f) or {}
            else:
                data = json.load(f)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigurationError(f"Cannot parse config file {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"Config file {path} must hold a mapping, got {type(data).__name__}")
    return data


def apply_overrides(data: Dict[str, Any], assignments: Iterable[str]) -> Dict[str, Any]:
    """Apply ``dotted.key=value`` assignments; values are parsed as YAML scalars."""
    result = copy.deepcopy(data)
    for assignment in assignments:
        key, sep, raw = assignment.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"Override {assignment!r} is not of the form key=value")
        parts = key.strip().split(".")
        node = result
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"Override {assignment!r}: {part!r} is not a section")
            node = child
        node[parts[-1]] = yaml.safe_load(raw) if raw.strip() else None
    return result


def validate_config(data: Dict[str, Any]) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid scenario config: {e}") from e


def load_scenario(
    path: Optional[str] = None, preset_name: Optional[str] = None, overrides: Optional[List[str]] = None
) -> ScenarioConfig:
    """File (or preset, default s8) plus overrides, validated."""
    if path:
        data = read_config_file(path)
    else:
        data = preset(preset_name or "s8")
    return validate_config(apply_overrides(data, overrides or []))


def save_scenario(cfg: ScenarioConfig, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    payload = cfg.model_dump()
    with open(path, "w", encoding="utf-8") as f:
        if path.endswith((".yaml", ".yml")):
            yaml.safe_dump(payload, f, indent=2, default_flow_style=False, sort_keys=True)
        else:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
    return path
