"""
Flat binary raster files.

Layout: magic ``CRST``, then little-endian uint32 H, W, channels and a uint8
dtype code, followed by the row-major payload. A JSON sidecar carries
free-form metadata next to the raster. An exemplar memory spills to a
directory of exported samples plus a ``memory.json`` index.
"""

import json
import os
import struct
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigurationError, ShapeError
from .memory import ExemplarMemory, MemoryEntry
from .schedule import FIRST_FOREGROUND
from .synth import Scene, TaskSample, check_pair

MAGIC = b"CRST"
_HEADER = struct.Struct("<4sIIIB")
MEMORY_INDEX = "memory.json"

DTYPE_CODES: Dict[int, np.dtype] = {
    1: np.dtype("<u1"),
    2: np.dtype("<i4"),
    3: np.dtype("<i8"),
    4: np.dtype("<f4"),
    5: np.dtype("<f8"),
}
_CODE_OF = {dtype: code for code, dtype in DTYPE_CODES.items()}


class RasterFormatError(ShapeError):
    """Raster bytes that do not match the header."""


def write_raster(path: str, array: np.ndarray) -> str:
    array = np.asarray(array)
    if array.ndim == 2:
        array = array[..., None]
    if array.ndim != 3:
        raise ShapeError(f"Raster must be HxW or HxWxC, got shape {array.shape}")
    dtype = array.dtype.newbyteorder("<") if array.dtype.byteorder == ">" else array.dtype
    if dtype not in _CODE_OF:
        raise ShapeError(f"Unsupported raster dtype {array.dtype}")
    h, w, c = array.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, h, w, c, _CODE_OF[dtype]))
        f.write(np.ascontiguousarray(array, dtype=dtype).tobytes())
    return path


def read_raster(path: str, squeeze: bool = True) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER.size:
        raise RasterFormatError(f"{path}: file shorter than raster header")
    magic, h, w, c, code = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise RasterFormatError(f"{path}: bad magic {magic!r}")
    if code not in DTYPE_CODES:
        raise RasterFormatError(f"{path}: unknown dtype code {code}")
    dtype = DTYPE_CODES[code]
    expected = h * w * c * dtype.itemsize
    payload = data[_HEADER.size :]
    if len(payload) != expected:
        raise RasterFormatError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    array = np.frombuffer(payload, dtype=dtype).reshape(h, w, c).copy()
    if squeeze and c == 1:
        array = array[..., 0]
    return array


def write_sidecar(path: str, metadata: dict) -> str:
    with open(path, "w") as f:
        json.dump(metadata, f, indent=2, sort_keys=True)
    return path


def read_sidecar(path: str) -> dict:
    with open(path, "r") as f:
        return json.load(f)


def export_sample(sample: TaskSample, directory: str, stem: str, extra: Optional[dict] = None) -> Tuple[str, ...]:
    """Write image, task labels, full labels and saliency of one sample, plus its sidecar."""
    os.makedirs(directory, exist_ok=True)
    base = os.path.join(directory, stem)
    paths = (
        write_raster(f"{base}.image.rst", sample.scene.image),
        write_raster(f"{base}.labels.rst", sample.labels),
        write_raster(f"{base}.full.rst", sample.scene.full_labels),
        write_raster(f"{base}.saliency.rst", sample.saliency),
    )
    metadata = {
        "scene_seed": sample.scene_seed,
        "task": sample.task,
        "classes": list(sample.classes),
        "height": int(sample.labels.shape[0]),
        "width": int(sample.labels.shape[1]),
    }
    metadata.update(extra or {})
    return paths + (write_sidecar(f"{base}.json", metadata),)


def import_sample(directory: str, stem: str) -> TaskSample:
    base = os.path.join(directory, stem)
    metadata = read_sidecar(f"{base}.json")
    full_labels = read_raster(f"{base}.full.rst")
    scene = Scene(
        image=read_raster(f"{base}.image.rst"),
        full_labels=full_labels,
        saliency=(full_labels >= FIRST_FOREGROUND).astype(np.uint8),
        scene_seed=int(metadata["scene_seed"]),
    )
    labels = read_raster(f"{base}.labels.rst")
    check_pair(scene.image, labels)
    return TaskSample(
        scene=scene,
        labels=labels,
        saliency=read_raster(f"{base}.saliency.rst"),
        task=int(metadata["task"]),
    )


def spill_memory(memory: ExemplarMemory, directory: str) -> str:
    """Write every entry as an exported sample, in memory order; returns the index path."""
    os.makedirs(directory, exist_ok=True)
    stems = []
    for i, entry in enumerate(memory.entries):
        stem = f"entry_{i:04d}"
        sample = TaskSample(
            scene=entry.scene,
            labels=np.asarray(entry.labels),
            saliency=entry.saliency,
            task=entry.source_task,
            classes=entry.classes,
        )
        export_sample(sample, directory, stem)
        stems.append(stem)
    index = {"capacity": memory.capacity, "warning": memory.warning, "entries": stems}
    return write_sidecar(os.path.join(directory, MEMORY_INDEX), index)


def load_spilled_memory(directory: str) -> ExemplarMemory:
    index_path = os.path.join(directory, MEMORY_INDEX)
    if not os.path.exists(index_path):
        raise ConfigurationError(f"No {MEMORY_INDEX} in {directory}")
    index = read_sidecar(index_path)
    entries = [MemoryEntry.from_sample(import_sample(directory, stem)) for stem in index["entries"]]
    return ExemplarMemory(capacity=int(index["capacity"]), entries=entries, warning=index.get("warning"))
