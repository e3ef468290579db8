"""
Class id conventions and incremental task schedules.

Id 0 is the background class, id 1 the unknown class; foreground object
classes start at 2. A schedule is an ordered list of disjoint foreground
class sets C_1..C_T.
"""

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Tuple

import numpy as np

from .errors import ClassRangeError, ConfigurationError

BACKGROUND = 0
UNKNOWN = 1
FIRST_FOREGROUND = 2
DUMMY_CLASSES: FrozenSet[int] = frozenset({BACKGROUND, UNKNOWN})


def is_foreground(class_id: int) -> bool:
    return int(class_id) >= FIRST_FOREGROUND


def catalog_ids(catalog_size: int) -> List[int]:
    """Foreground ids of a catalog with ``catalog_size`` classes."""
    return list(range(FIRST_FOREGROUND, FIRST_FOREGROUND + catalog_size))


@dataclass(frozen=True)
class TaskSchedule:
    """Ordered disjoint class sets defining an incremental scenario."""

    tasks: Tuple[FrozenSet[int], ...]
    ordering_seed: int = 0
    catalog_size: int = 0
    _task_of: Dict[int, int] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        tasks = tuple(frozenset(int(c) for c in task) for task in self.tasks)
        object.__setattr__(self, "tasks", tasks)
        if not tasks:
            raise ConfigurationError("A schedule needs at least one task")
        for t, task in enumerate(tasks, start=1):
            if not task:
                raise ConfigurationError(f"Task {t} has no classes")
            for class_id in task:
                if not is_foreground(class_id):
                    raise ConfigurationError(f"Task {t} contains reserved id {class_id}")
                if class_id in self._task_of:
                    raise ConfigurationError(
                        f"Class {class_id} appears in tasks {self._task_of[class_id]} and {t}"
                    )
                self._task_of[class_id] = t
        if self.catalog_size == 0:
            object.__setattr__(self, "catalog_size", len(self._task_of))

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def _check(self, t: int):
        if not 1 <= t <= self.num_tasks:
            raise ClassRangeError(f"Task index {t} outside 1..{self.num_tasks}")

    def new_classes(self, t: int) -> FrozenSet[int]:
        """C_t."""
        self._check(t)
        return self.tasks[t - 1]

    def seen_classes(self, t: int) -> FrozenSet[int]:
        """C^{1:t}."""
        self._check(t)
        return frozenset().union(*self.tasks[:t])

    def past_classes(self, t: int) -> FrozenSet[int]:
        """C^{1:t-1}; empty at t = 1."""
        self._check(t)
        return frozenset().union(*self.tasks[: t - 1]) if t > 1 else frozenset()

    def label_space(self, t: int) -> FrozenSet[int]:
        """Y^t = {c_b, c_u} ∪ C^{1:t}."""
        return DUMMY_CLASSES | self.seen_classes(t)

    def task_of(self, class_id: int) -> int:
        return self._task_of[int(class_id)]

    @property
    def all_classes(self) -> FrozenSet[int]:
        return frozenset(self._task_of)

    @property
    def catalog(self) -> List[int]:
        return catalog_ids(self.catalog_size)

    def to_dict(self) -> dict:
        return {
            "tasks": [sorted(task) for task in self.tasks],
            "ordering_seed": self.ordering_seed,
            "catalog_size": self.catalog_size,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskSchedule":
        return cls(
            tasks=tuple(frozenset(task) for task in data["tasks"]),
            ordering_seed=int(data.get("ordering_seed", 0)),
            catalog_size=int(data.get("catalog_size", 0)),
        )


def _ordered_catalog(ordering_seed: int, catalog_size: int) -> List[int]:
    rng = np.random.default_rng(ordering_seed)
    return [int(c) for c in rng.permutation(catalog_ids(catalog_size))]


def base_schedule(base_count: int, ordering_seed: int, catalog_size: int) -> TaskSchedule:
    """Single-task schedule (T = 1) drawn from the same seeded class order as make_schedule."""
    if base_count < 1 or base_count > catalog_size:
        raise ConfigurationError(f"base_count must be in 1..{catalog_size}, got {base_count}")
    order = _ordered_catalog(ordering_seed, catalog_size)
    return TaskSchedule(tasks=(frozenset(order[:base_count]),), ordering_seed=ordering_seed, catalog_size=catalog_size)


def make_schedule(
    base_count: int, step_count: int, num_steps: int, ordering_seed: int, catalog_size: int
) -> TaskSchedule:
    """Build a B-S schedule: |C_1| = base_count, then ``num_steps`` tasks of ``step_count`` classes."""
    for name, value in (
        ("base_count", base_count),
        ("step_count", step_count),
        ("num_steps", num_steps),
        ("catalog_size", catalog_size),
    ):
        if value < 1:
            raise ConfigurationError(f"{name} must be >= 1, got {value}")

    needed = base_count + step_count * num_steps
    if needed > catalog_size:
        raise ConfigurationError(
            f"Schedule needs {needed} classes but catalog has {catalog_size} (deficit {needed - catalog_size})"
        )

    order = _ordered_catalog(ordering_seed, catalog_size)
    tasks = [frozenset(order[:base_count])]
    for s in range(num_steps):
        start = base_count + s * step_count
        tasks.append(frozenset(order[start : start + step_count]))
    return TaskSchedule(tasks=tuple(tasks), ordering_seed=ordering_seed, catalog_size=catalog_size)


def joint_schedule(schedule: TaskSchedule) -> TaskSchedule:
    """Collapse a schedule into a single task holding every class (joint-training upper bound)."""
    return TaskSchedule(
        tasks=(schedule.all_classes,), ordering_seed=schedule.ordering_seed, catalog_size=schedule.catalog_size
    )


def seen_classes(schedule: TaskSchedule, t: int) -> FrozenSet[int]:
    """Union of C_1..C_t."""
    return schedule.seen_classes(t)


def class_groups(schedule: TaskSchedule, t: int) -> Dict[str, List[int]]:
    """Evaluation column groups at step t: base (bg + C_1), incremental (C_2..C_t), all."""
    base = [BACKGROUND] + sorted(schedule.new_classes(1))
    incremental = sorted(schedule.seen_classes(t) - schedule.new_classes(1))
    return {"base": base, "new": incremental, "all": base + incremental}

