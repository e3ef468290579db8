#!/usr/bin/env python3
"""
Synthetic Segmentation Scenes

Deterministic generator of small multi-object scenes: an RGB image, the full
ground-truth label raster over the whole catalog, and the oracle saliency mask
(union of object masks) that stands in for an off-the-shelf salient object
detector. Task datasets relabel the full rasters for one incremental step.
"""

import colorsys
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw

from .errors import ConfigurationError, ShapeError
from .schedule import BACKGROUND, FIRST_FOREGROUND, TaskSchedule
from .structured_logger import get_logger

log = get_logger(__name__)

SHAPES = ("rect", "disc", "triangle")
PROTOCOLS = ("overlapped", "disjoint")
_GOLDEN = 0.618033988749895


@dataclass(frozen=True)
class GeometryConfig:
    """Bounds for scene layout and appearance."""

    height: int = 32
    width: int = 32
    min_objects: int = 1
    max_objects: int = 3
    min_size: int = 7
    max_size: int = 15
    noise_sigma: float = 0.04
    color_jitter: float = 0.04
    texture_amplitude: float = 0.08
    class_skew: float = 0.0  # Zipf exponent over catalog order; 0 = uniform class frequencies
    shapes: Tuple[str, ...] = SHAPES

    def validate(self):
        if self.height < 8 or self.width < 8:
            raise ConfigurationError(f"Image must be at least 8x8, got {self.height}x{self.width}")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ConfigurationError(f"Invalid object count range {self.min_objects}..{self.max_objects}")
        if not 2 <= self.min_size <= self.max_size:
            raise ConfigurationError(f"Invalid object size range {self.min_size}..{self.max_size}")
        if self.min_size > min(self.height, self.width):
            raise ConfigurationError(
                f"Object min size {self.min_size} exceeds image {self.height}x{self.width}"
            )
        if self.noise_sigma < 0 or self.color_jitter < 0 or self.class_skew < 0:
            raise ConfigurationError("Noise, jitter and skew must be non-negative")
        unknown = set(self.shapes) - set(SHAPES)
        if not self.shapes or unknown:
            raise ConfigurationError(f"Unknown shapes {sorted(unknown)}; choose from {SHAPES}")
        return self


@dataclass
class Scene:
    """One generated scene with its full labels and oracle saliency."""

    image: np.ndarray  # (H, W, 3) float64 in [0, 1]
    full_labels: np.ndarray  # (H, W) int64, every catalog class labelled
    saliency: np.ndarray  # (H, W) uint8 in {0, 1}
    scene_seed: int

    @property
    def shape(self) -> Tuple[int, int]:
        return self.full_labels.shape

    def present_classes(self) -> List[int]:
        return [int(c) for c in np.unique(self.full_labels) if c >= FIRST_FOREGROUND]


@dataclass
class TaskSample:
    """A training sample of one task: scene, task-time labels and detector saliency."""

    scene: Scene
    labels: np.ndarray
    saliency: np.ndarray
    task: int
    classes: Tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not self.classes:
            self.classes = tuple(int(c) for c in np.unique(self.labels) if c >= FIRST_FOREGROUND)

    @property
    def scene_seed(self) -> int:
        return self.scene.scene_seed

    def __iter__(self):
        # unpacks as (scene, labels)
        yield self.scene
        yield self.labels


def class_color(class_id: int) -> np.ndarray:
    """Base RGB of a foreground class: golden-ratio hue walk, fixed saturation and value."""
    hue = (class_id * _GOLDEN) % 1.0
    return np.array(colorsys.hsv_to_rgb(hue, 0.75, 0.85))


def _class_texture(class_id: int, height: int, width: int) -> np.ndarray:
    angle = np.deg2rad((class_id * 37) % 180)
    frequency = 0.6 + 0.35 * (class_id % 3)
    yy, xx = np.mgrid[0:height, 0:width]
    return np.sin(frequency * (np.cos(angle) * xx + np.sin(angle) * yy))


def _background(rng: np.random.Generator, geometry: GeometryConfig) -> np.ndarray:
    h, w = geometry.height, geometry.width
    base = 0.35 + 0.1 * rng.random()
    coarse = rng.normal(0.0, 0.06, size=(h // 4 + 1, w // 4 + 1))
    smooth = np.kron(coarse, np.ones((4, 4)))[:h, :w]
    tint = rng.normal(0.0, 0.02, size=3)
    return np.clip(base + smooth[..., None] + tint, 0.0, 1.0)


def _shape_mask(shape: str, x0: int, y0: int, size: int, rotation: float, geometry: GeometryConfig) -> np.ndarray:
    mask = Image.new("L", (geometry.width, geometry.height), 0)
    draw = ImageDraw.Draw(mask)
    x1, y1 = x0 + size - 1, y0 + size - 1
    if shape == "rect":
        draw.rectangle([(x0, y0), (x1, y1)], fill=1)
    elif shape == "disc":
        draw.ellipse([(x0, y0), (x1, y1)], fill=1)
    else:
        r = size / 2.0
        draw.regular_polygon((x0 + r, y0 + r, r), 3, rotation=rotation, fill=1)
    return np.asarray(mask, dtype=bool)


def _class_weights(classes: Sequence[int], skew: float) -> np.ndarray:
    ranks = np.arange(1, len(classes) + 1, dtype=np.float64)
    weights = ranks ** (-skew)
    return weights / weights.sum()


def generate_scene(
    seed: int,
    catalog: Iterable[int],
    geometry_config: Optional[GeometryConfig] = None,
    anchor_classes: Optional[Iterable[int]] = None,
) -> Scene:
    """
    Generate one scene.

    Objects are drawn back-to-front, so overlapping pixels take the class of
    the front object. When ``anchor_classes`` is given, the front object's
    class is drawn from it, which guarantees at least one visible pixel of it.
    """
    geometry = (geometry_config or GeometryConfig()).validate()
    classes = sorted(int(c) for c in catalog)
    if not classes:
        raise ConfigurationError("Catalog must contain at least one class")
    anchors = sorted(int(c) for c in anchor_classes) if anchor_classes else []

    rng = np.random.default_rng(seed)
    h, w = geometry.height, geometry.width
    image = _background(rng, geometry)
    labels = np.full((h, w), BACKGROUND, dtype=np.int64)

    n_objects = int(rng.integers(geometry.min_objects, geometry.max_objects + 1))
    weights = _class_weights(classes, geometry.class_skew)
    for index in range(n_objects):
        front = index == n_objects - 1
        if front and anchors:
            class_id = int(rng.choice(anchors, p=_class_weights(anchors, geometry.class_skew)))
        else:
            class_id = int(rng.choice(classes, p=weights))
        shape = geometry.shapes[int(rng.integers(len(geometry.shapes)))]
        size = int(rng.integers(geometry.min_size, min(geometry.max_size, h, w) + 1))
        x0 = int(rng.integers(0, w - size + 1))
        y0 = int(rng.integers(0, h - size + 1))
        rotation = float(rng.uniform(0.0, 360.0))
        mask = _shape_mask(shape, x0, y0, size, rotation, geometry)

        color = np.clip(class_color(class_id) + rng.normal(0.0, geometry.color_jitter, size=3), 0.0, 1.0)
        texture = geometry.texture_amplitude * _class_texture(class_id, h, w)
        image[mask] = np.clip(color[None, :] + texture[mask][:, None], 0.0, 1.0)
        labels[mask] = class_id

    image = np.clip(image + rng.normal(0.0, geometry.noise_sigma, size=image.shape), 0.0, 1.0)
    saliency = (labels >= FIRST_FOREGROUND).astype(np.uint8)
    return Scene(image=image, full_labels=labels, saliency=saliency, scene_seed=int(seed))


def relabel_raster(labels: np.ndarray, keep_classes: Iterable[int]) -> np.ndarray:
    """Keep ids in ``keep_classes``; map everything else to background."""
    keep = np.fromiter((int(c) for c in keep_classes), dtype=np.int64)
    return np.where(np.isin(labels, keep), labels, BACKGROUND).astype(np.int64)


def relabel_for_task(
    scene: Union[Scene, np.ndarray], schedule: TaskSchedule, t: int, protocol: str = "overlapped"
) -> np.ndarray:
    """
    Task-time label raster: C_t pixels keep their id, all others become background.

    The disjoint protocol differs only in which scenes are admitted (see
    build_task_dataset); the per-pixel mapping is the same.
    """
    if protocol not in PROTOCOLS:
        raise ConfigurationError(f"Unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    labels = scene.full_labels if isinstance(scene, Scene) else np.asarray(scene)
    return relabel_raster(labels, schedule.new_classes(t))


def corrupt_saliency(mask: np.ndarray, rate: float, seed: int) -> np.ndarray:
    """Flip exactly round(rate * N) pixels of a saliency mask, chosen by seed."""
    if not 0.0 <= rate <= 1.0:
        raise ConfigurationError(f"Saliency corruption rate must be in [0, 1], got {rate}")
    flat = np.asarray(mask, dtype=np.uint8).ravel().copy()
    n_flip = int(round(rate * flat.size))
    if n_flip:
        idx = np.random.default_rng(seed).choice(flat.size, size=n_flip, replace=False)
        flat[idx] = 1 - flat[idx]
    return flat.reshape(np.shape(mask))


def scene_seed_for(dataset_seed: int, t: int, index: int) -> int:
    return int(np.random.SeedSequence([dataset_seed, t, index]).generate_state(1)[0])


def build_task_dataset(
    schedule: TaskSchedule,
    t: int,
    n_scenes: int,
    dataset_seed: int,
    protocol: str = "overlapped",
    geometry: Optional[GeometryConfig] = None,
    saliency_corruption: float = 0.0,
) -> List[TaskSample]:
    """
    Draw D_t.

    Overlapped: every scene holds at least one C_t object; any catalog class may
    co-occur and is labelled background. Disjoint: scenes only contain C^{1:t}.
    """
    if n_scenes < 1:
        raise ConfigurationError(f"n_scenes must be >= 1, got {n_scenes}")
    if protocol not in PROTOCOLS:
        raise ConfigurationError(f"Unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    current = schedule.new_classes(t)
    catalog = schedule.catalog if protocol == "overlapped" else sorted(schedule.seen_classes(t))

    samples = []
    for i in range(n_scenes):
        seed = scene_seed_for(dataset_seed, t, i)
        scene = generate_scene(seed, catalog, geometry, anchor_classes=current)
        saliency = scene.saliency
        if saliency_corruption > 0:
            saliency = corrupt_saliency(saliency, saliency_corruption, seed)
        labels = relabel_for_task(scene, schedule, t, protocol)
        samples.append(TaskSample(scene=scene, labels=labels, saliency=saliency, task=t))

    log.debug(
        "Task dataset built",
        extra={"task": t, "scenes": n_scenes, "protocol": protocol, "dataset_seed": dataset_seed},
    )
    return samples


def build_eval_scenes(
    schedule: TaskSchedule, n_scenes: int, eval_seed: int, geometry: Optional[GeometryConfig] = None
) -> List[Scene]:
    """Held-out scenes over every scheduled class, generated once per scenario."""
    if n_scenes < 1:
        raise ConfigurationError(f"n_scenes must be >= 1, got {n_scenes}")
    classes = sorted(schedule.all_classes)
    # Uniform class frequencies so every class is measured.
    geometry = replace(geometry or GeometryConfig(), class_skew=0.0)
    return [generate_scene(scene_seed_for(eval_seed, 0, i), classes, geometry) for i in range(n_scenes)]


def eval_labels(scene: Scene, seen: Iterable[int]) -> np.ndarray:
    """Full labels restricted to the seen classes; future classes become background."""
    return relabel_raster(scene.full_labels, seen)


def check_pair(image: np.ndarray, labels: np.ndarray):
    if image.shape[:2] != labels.shape:
        raise ShapeError(f"Image {image.shape[:2]} and labels {labels.shape} differ in size")
