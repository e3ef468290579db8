#!/usr/bin/env python3
"""
Tiny exemplar memory.

A capacity-bounded store of past training samples with their original
task-time labels. Two update policies: class-balanced (floor(M / |C^{1:t}|)
slots per seen class, then random drop/supplement to exactly M) and a
reservoir baseline with no class guarantee.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import PreconditionError
from .schedule import FIRST_FOREGROUND, TaskSchedule
from .structured_logger import get_logger
from .synth import Scene, TaskSample

log = get_logger(__name__)

SAMPLING_POLICIES = ("class_balanced", "random")


@dataclass(frozen=True, eq=False)
class MemoryEntry:
    """One stored sample. ``labels`` is the raster of its source task and is never rewritten."""

    scene: Scene
    labels: np.ndarray
    saliency: np.ndarray
    source_task: int
    classes: tuple = ()

    @classmethod
    def from_sample(cls, sample: TaskSample) -> "MemoryEntry":
        labels = sample.labels.copy()
        labels.setflags(write=False)
        classes = tuple(int(c) for c in np.unique(labels) if c >= FIRST_FOREGROUND)
        return cls(scene=sample.scene, labels=labels, saliency=sample.saliency, source_task=sample.task,
                   classes=classes)

    @property
    def key(self) -> tuple:
        return (self.source_task, self.scene.scene_seed)


@dataclass
class ExemplarMemory:
    capacity: int
    entries: List[MemoryEntry] = field(default_factory=list)
    warning: Optional[str] = None

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def class_index(self) -> Dict[int, List[int]]:
        """ClassId -> positions of the entries whose stored labels contain it."""
        index: Dict[int, List[int]] = {}
        for position, entry in enumerate(self.entries):
            for c in entry.classes:
                index.setdefault(c, []).append(position)
        return index

    def holdings(self) -> Dict[int, int]:
        return {c: len(positions) for c, positions in sorted(self.class_index.items())}

    def covers(self, classes) -> bool:
        index = self.class_index
        return all(index.get(int(c)) for c in classes)


def _rng(seed: int, t: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([seed, t, tag])


def _fill_round_robin(mem: ExemplarMemory, task_dataset: Sequence[TaskSample], seen: List[int]) -> List[MemoryEntry]:
    """At most one entry per class, classes in id order, until capacity."""
    candidates = list(mem.entries) + [MemoryEntry.from_sample(s) for s in task_dataset]
    chosen: List[MemoryEntry] = []
    keys = set()
    for c in seen:
        if len(chosen) >= mem.capacity:
            break
        if any(c in e.classes for e in chosen):
            continue
        for entry in candidates:
            if c in entry.classes and entry.key not in keys:
                chosen.append(entry)
                keys.add(entry.key)
                break
    return chosen


def update_class_balanced(
    mem: ExemplarMemory, task_dataset: Sequence[TaskSample], schedule: TaskSchedule, t: int, seed: int
) -> ExemplarMemory:
    """
    Rebalance memory after training task t.

    Each seen class gets q = floor(M / |C^{1:t}|) slots: old holdings are
    trimmed to q by seeded random eviction, q samples per new class come from
    D_t, then random supplement or drop brings the size to exactly M.
    """
    seen = sorted(schedule.seen_classes(t))
    new = sorted(schedule.new_classes(t))
    capacity = mem.capacity
    quota = capacity // len(seen)

    if quota == 0:
        message = f"Capacity {capacity} below {len(seen)} seen classes; one entry per class at most"
        log.warning("Memory quota is zero", extra={"capacity": capacity, "seen": len(seen), "task": t})
        return ExemplarMemory(capacity=capacity, entries=_fill_round_robin(mem, task_dataset, seen), warning=message)

    rng = _rng(seed, t, 0)
    counts = {c: 0 for c in seen}

    kept: List[MemoryEntry] = []
    evicted: List[MemoryEntry] = []
    for position in rng.permutation(len(mem.entries)):
        entry = mem.entries[int(position)]
        owned = [c for c in entry.classes if c in counts]
        if any(counts[c] < quota for c in owned):
            kept.append(entry)
            for c in owned:
                counts[c] += 1
        else:
            evicted.append(entry)

    fresh = [MemoryEntry.from_sample(s) for s in task_dataset]
    taken = set()
    for c in new:
        need = quota - counts[c]
        if need <= 0:
            continue
        pool = [i for i, e in enumerate(fresh) if c in e.classes and i not in taken]
        picks = rng.choice(len(pool), size=min(need, len(pool)), replace=False) if pool else []
        for p in sorted(int(p) for p in picks):
            index = pool[p]
            taken.add(index)
            kept.append(fresh[index])
            for owned in fresh[index].classes:
                if owned in counts:
                    counts[owned] += 1

    if len(kept) < capacity:
        spare = [e for i, e in enumerate(fresh) if i not in taken]
        spare_order = [spare[int(i)] for i in rng.permutation(len(spare))]
        spare_order += [evicted[int(i)] for i in rng.permutation(len(evicted))]
        kept.extend(spare_order[: capacity - len(kept)])
    while len(kept) > capacity:
        index = ExemplarMemory(capacity=capacity, entries=kept).class_index
        # never drop the last holder of a class
        droppable = [i for i, e in enumerate(kept) if all(len(index.get(c, [])) > 1 for c in e.classes)]
        victims = droppable or list(range(len(kept)))
        kept.pop(victims[int(rng.integers(len(victims)))])

    result = ExemplarMemory(capacity=capacity, entries=kept)
    log.info(
        "Memory updated",
        extra={
            "policy": "class_balanced",
            "task": t,
            "quota": quota,
            "size": len(result),
            "holdings": result.holdings(),
        },
    )
    return result


def reservoir(num_seen_examples: int, buffer_size: int, rng: np.random.Generator) -> int:
    """
    Reservoir sampling step.

    Returns the target slot if the current example is kept, else -1.
    """
    if num_seen_examples < buffer_size:
        return num_seen_examples
    rand = int(rng.integers(0, num_seen_examples + 1))
    return rand if rand < buffer_size else -1


def update_random(
    mem: ExemplarMemory, task_dataset: Sequence[TaskSample], schedule: TaskSchedule, t: int, seed: int
) -> ExemplarMemory:
    """Uniform reservoir selection over the old entries followed by D_t, down to M."""
    schedule.new_classes(t)  # range check
    rng = _rng(seed, t, 1)
    stream = list(mem.entries) + [MemoryEntry.from_sample(s) for s in task_dataset]
    buffer: List[MemoryEntry] = []
    for n, entry in enumerate(stream):
        slot = reservoir(n, mem.capacity, rng)
        if slot < 0:
            continue
        if slot == len(buffer):
            buffer.append(entry)
        else:
            buffer[slot] = entry
    result = ExemplarMemory(capacity=mem.capacity, entries=buffer)
    log.info(
        "Memory updated",
        extra={"policy": "random", "task": t, "size": len(result), "holdings": result.holdings()},
    )
    return result


UPDATES = {"class_balanced": update_class_balanced, "random": update_random}


def sample_half_batch(mem: ExemplarMemory, k: int, seed: int, step: int) -> List[MemoryEntry]:
    """k entries: without replacement when k <= |M|, uniform with replacement otherwise."""
    if not mem.entries:
        raise PreconditionError("Cannot sample from an empty exemplar memory")
    rng = np.random.default_rng([seed, step])
    n = len(mem.entries)
    if k > n:
        picks = rng.integers(0, n, size=k)
    else:
        picks = rng.permutation(n)[:k]
    return [mem.entries[int(i)] for i in picks]
