#!/usr/bin/env python3
"""
Versioned checkpoint files.

Layout: magic ``CISSCKPT``, uint32 format version, uint64 header length, a
UTF-8 JSON header, then the raw little-endian array payload. The header lists
every array (name, dtype, shape, offset) and the SHA-256 of the payload, plus
the schedule snapshot, ordered heads with their frozen flags, extractor
metadata and, for resumable runs, memory entries and finished step metrics.
"""

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .backbone import extractor_from_state, extractor_state
from .errors import CheckpointCorruptError, CheckpointError, CheckpointVersionError
from .heads import HeadParams, SegModel
from .memory import ExemplarMemory, MemoryEntry
from .metrics import MetricsReport
from .schedule import TaskSchedule
from .structured_logger import get_logger
from .synth import Scene

log = get_logger(__name__)

MAGIC = b"CISSCKPT"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<8sIQ")


@dataclass
class RunState:
    """Everything needed to continue a scenario after ``model.task_index``."""

    model: SegModel
    schedule: Optional[TaskSchedule] = None
    memory: Optional[ExemplarMemory] = None
    report: Optional[MetricsReport] = None
    state: Dict[str, object] = field(default_factory=dict)


def _model_arrays(model: SegModel) -> Tuple[dict, Dict[str, np.ndarray]]:
    meta, arrays = extractor_state(model.extractor)
    heads = []
    for c in model.class_ids:
        head = model.heads[c]
        arrays[f"head.{c}.weight"] = np.asarray(head.weight, dtype=np.float64)
        arrays[f"head.{c}.bias"] = np.array([head.bias], dtype=np.float64)
        heads.append({"class_id": c, "frozen": bool(head.frozen)})
    return {"extractor": meta, "heads": heads, "task_index": model.task_index}, arrays


def _memory_arrays(memory: ExemplarMemory) -> Tuple[dict, Dict[str, np.ndarray]]:
    arrays = {}
    entries = []
    for i, entry in enumerate(memory.entries):
        arrays[f"memory.{i}.image"] = entry.scene.image
        arrays[f"memory.{i}.full_labels"] = entry.scene.full_labels
        arrays[f"memory.{i}.scene_saliency"] = entry.scene.saliency
        arrays[f"memory.{i}.labels"] = entry.labels
        arrays[f"memory.{i}.saliency"] = entry.saliency
        entries.append(
            {"source_task": entry.source_task, "scene_seed": entry.scene.scene_seed, "classes": list(entry.classes)}
        )
    return {"capacity": memory.capacity, "warning": memory.warning, "entries": entries}, arrays


def save_checkpoint(
    model: SegModel,
    path: str,
    schedule: Optional[TaskSchedule] = None,
    memory: Optional[ExemplarMemory] = None,
    report: Optional[MetricsReport] = None,
    state: Optional[dict] = None,
) -> str:
    """Write ``model`` (and optionally run state) to ``path``; returns the payload digest."""
    header, arrays = _model_arrays(model)
    header["schedule"] = schedule.to_dict() if schedule is not None else None
    header["memory"] = None
    if memory is not None:
        header["memory"], memory_arrays = _memory_arrays(memory)
        arrays.update(memory_arrays)
    header["report"] = json.loads(report.to_json()) if report is not None else None
    header["state"] = dict(state or {})

    manifest: List[dict] = []
    chunks: List[bytes] = []
    offset = 0
    for name in sorted(arrays):
        array = np.ascontiguousarray(arrays[name])
        array = array.astype(array.dtype.newbyteorder("<"), copy=False)
        data = array.tobytes()
        manifest.append({"name": name, "dtype": array.dtype.str, "shape": list(array.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header["arrays"] = manifest
    header["payload_bytes"] = len(payload)
    header["payload_sha256"] = hashlib.sha256(payload).hexdigest()

    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as f:
        f.write(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(encoded)))
        f.write(encoded)
        f.write(payload)
    os.replace(tmp_path, path)
    log.info("Checkpoint saved", extra={"path": path, "task": model.task_index, "bytes": len(payload)})
    return header["payload_sha256"]


def _read(path: str) -> Tuple[dict, Dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e

    if len(blob) < _PREAMBLE.size:
        raise CheckpointCorruptError(f"Checkpoint {path} is truncated ({len(blob)} bytes)")
    magic, version, header_len = _PREAMBLE.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointCorruptError(f"{path} is not a checkpoint (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"Checkpoint {path} has format version {version}; supported: {FORMAT_VERSION}")
    start = _PREAMBLE.size
    if len(blob) < start + header_len:
        raise CheckpointCorruptError(f"Checkpoint {path} is truncated inside its header")
    try:
        header = json.loads(blob[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointCorruptError(f"Checkpoint {path} has an unreadable header: {e}") from e

    payload = blob[start + header_len :]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointCorruptError(
            f"Checkpoint {path} payload is {len(payload)} bytes, header says {header['payload_bytes']}"
        )
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointCorruptError(f"Checkpoint {path} payload digest mismatch")

    arrays = {}
    for item in header["arrays"]:
        dtype = np.dtype(item["dtype"])
        count = int(np.prod(item["shape"], dtype=np.int64))
        array = np.frombuffer(payload, dtype=dtype, count=count, offset=item["offset"]).reshape(item["shape"])
        arrays[item["name"]] = array.astype(dtype.newbyteorder("="))
    return header, arrays


def _model_from(header: dict, arrays: Dict[str, np.ndarray]) -> SegModel:
    extractor = extractor_from_state(header["extractor"], arrays)
    heads = {}
    for item in header["heads"]:
        c = int(item["class_id"])
        heads[c] = HeadParams(
            weight=arrays[f"head.{c}.weight"].copy(), bias=float(arrays[f"head.{c}.bias"][0]), frozen=item["frozen"]
        )
    return SegModel(extractor=extractor, heads=heads, task_index=int(header["task_index"]))


def _memory_from(meta: dict, arrays: Dict[str, np.ndarray]) -> ExemplarMemory:
    entries = []
    for i, item in enumerate(meta["entries"]):
        scene = Scene(
            image=arrays[f"memory.{i}.image"],
            full_labels=arrays[f"memory.{i}.full_labels"],
            saliency=arrays[f"memory.{i}.scene_saliency"],
            scene_seed=int(item["scene_seed"]),
        )
        labels = arrays[f"memory.{i}.labels"]
        labels.setflags(write=False)
        entries.append(
            MemoryEntry(
                scene=scene,
                labels=labels,
                saliency=arrays[f"memory.{i}.saliency"],
                source_task=int(item["source_task"]),
                classes=tuple(int(c) for c in item["classes"]),
            )
        )
    return ExemplarMemory(capacity=int(meta["capacity"]), entries=entries, warning=meta.get("warning"))


def load_run_state(path: str) -> RunState:
    header, arrays = _read(path)
    schedule = TaskSchedule.from_dict(header["schedule"]) if header.get("schedule") else None
    memory = _memory_from(header["memory"], arrays) if header.get("memory") else None
    report = MetricsReport.from_dict(header["report"]) if header.get("report") else None
    return RunState(
        model=_model_from(header, arrays), schedule=schedule, memory=memory, report=report, state=header["state"]
    )


def load_checkpoint(path: str) -> SegModel:
    """Load the model stored at ``path``; bit-exact with what was saved."""
    return load_run_state(path).model
