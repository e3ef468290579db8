"""
Frozen convolutional feature extractor.

A fixed, seeded filter bank. The default bank starts with a hand-crafted
stage (color identity, luminance gradients, 3x3 color average; color
channels centred on mid-gray) followed by a wide random ReLU stage that
keeps its input alongside its own channels. All convolutions use zero "same"
padding at stride 1, so features stay at label resolution. Weights are never
trained.
"""

import hashlib
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, ShapeError

STAGE_KINDS = ("handcrafted", "conv", "identity")
ACTIVATIONS = ("none", "relu")
IMAGE_CHANNELS = 3


@dataclass(frozen=True)
class StageSpec:
    kind: str
    kernel_size: int
    in_channels: int
    out_channels: int
    activation: str = "none"
    keep_input: bool = False


DEFAULT_STAGES: Tuple[StageSpec, ...] = (
    StageSpec("handcrafted", 3, 3, 8, "none"),
    StageSpec("conv", 3, 8, 32, "relu", keep_input=True),
)

# Mid-gray offset subtracted from the hand-crafted color channels.
COLOR_CENTRE = 0.5


@dataclass(frozen=True, eq=False)
class Stage:
    kind: str
    kernel: np.ndarray  # (k, k, C_in, C_out)
    bias: np.ndarray  # (C_out,)
    activation: str
    keep_input: bool = False

    @property
    def kernel_size(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[2]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[3]

    @property
    def output_channels(self) -> int:
        """Channels handed to the next stage: the input first when it is kept."""
        return self.out_channels + (self.in_channels if self.keep_input else 0)


@dataclass(frozen=True, eq=False)
class Extractor:
    """h_psi: stages applied in order. Weights are read-only arrays and never receive updates."""

    stages: Tuple[Stage, ...]
    seed: int
    input_channels: int = IMAGE_CHANNELS

    @property
    def output_dim(self) -> int:
        return self.stages[-1].output_channels if self.stages else self.input_channels

    @property
    def frozen(self) -> bool:
        """Permanent: every kernel and bias is a read-only array from construction on."""
        return all(not a.flags.writeable for stage in self.stages for a in (stage.kernel, stage.bias))

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"extractor:{self.seed}:{self.input_channels}".encode())
        for stage in self.stages:
            h.update(f"{stage.kind}:{stage.activation}:{stage.keep_input}:{stage.kernel.shape}".encode())
            h.update(np.ascontiguousarray(stage.kernel).tobytes())
            h.update(np.ascontiguousarray(stage.bias).tobytes())
        return h.hexdigest()

    def feature_bound(self) -> np.ndarray:
        """Per-channel bound on |feature| for any input image with values in [0, 1]."""
        bound = np.ones(self.input_channels)
        for stage in self.stages:
            weights = np.abs(stage.kernel).sum(axis=(0, 1))  # (C_in, C_out)
            produced = weights.T @ bound + np.abs(stage.bias)
            bound = np.concatenate([bound, produced]) if stage.keep_input else produced
        return bound


def _handcrafted_kernel(spec: StageSpec) -> Tuple[np.ndarray, np.ndarray]:
    if (spec.in_channels, spec.out_channels, spec.kernel_size) != (3, 8, 3):
        raise ConfigurationError("Hand-crafted stage is fixed at 3x3 kernels, 3 -> 8 channels")
    kernel = np.zeros((3, 3, 3, 8))
    for c in range(3):
        kernel[1, 1, c, c] = 1.0
    sobel_x = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 8.0
    for c in range(3):
        # gradients of luminance (mean of RGB)
        kernel[:, :, c, 3] = sobel_x / 3.0
        kernel[:, :, c, 4] = sobel_x.T / 3.0
        kernel[:, :, c, 5 + c] = 1.0 / 9.0
    bias = np.zeros(8)
    bias[[0, 1, 2, 5, 6, 7]] = -COLOR_CENTRE
    return kernel, bias


def _build_stage(index: int, spec: StageSpec, seed: int) -> Stage:
    if spec.kind not in STAGE_KINDS:
        raise ConfigurationError(f"Unknown stage kind {spec.kind!r}")
    if spec.activation not in ACTIVATIONS:
        raise ConfigurationError(f"Unknown activation {spec.activation!r}")
    if spec.kernel_size < 1 or spec.kernel_size % 2 == 0:
        raise ConfigurationError(f"Kernel size must be odd and positive, got {spec.kernel_size}")

    bias = np.zeros(spec.out_channels)
    if spec.kind == "handcrafted":
        kernel, bias = _handcrafted_kernel(spec)
    elif spec.kind == "identity":
        if spec.in_channels != spec.out_channels:
            raise ConfigurationError("Identity stage needs matching in/out channels")
        kernel = np.zeros((spec.kernel_size, spec.kernel_size, spec.in_channels, spec.out_channels))
        centre = spec.kernel_size // 2
        kernel[centre, centre] = np.eye(spec.in_channels)
    else:
        rng = np.random.default_rng([seed, index])
        fan_in = spec.kernel_size * spec.kernel_size * spec.in_channels
        kernel = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(spec.kernel_size, spec.kernel_size,
                                                              spec.in_channels, spec.out_channels))
    kernel.setflags(write=False)
    bias.setflags(write=False)
    return Stage(kind=spec.kind, kernel=kernel, bias=bias, activation=spec.activation, keep_input=spec.keep_input)


def init_extractor(seed: int, spec: Optional[Sequence[StageSpec]] = None,
                   input_channels: int = IMAGE_CHANNELS) -> Extractor:
    """Build the extractor from a stage list; ``spec=None`` selects the default bank, ``[]`` pass-through."""
    specs = DEFAULT_STAGES if spec is None else tuple(spec)
    channels = input_channels
    stages: List[Stage] = []
    for index, stage_spec in enumerate(specs):
        if stage_spec.in_channels != channels:
            raise ConfigurationError(
                f"Stage {index} expects {stage_spec.in_channels} input channels, previous stage gives {channels}"
            )
        stages.append(_build_stage(index, stage_spec, seed))
        channels = stage_spec.out_channels + (stage_spec.in_channels if stage_spec.keep_input else 0)
    return Extractor(stages=tuple(stages), seed=seed, input_channels=input_channels)


def conv2d_same(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Zero-padded stride-1 convolution of an (H, W, C_in) array."""
    k = kernel.shape[0]
    pad = k // 2
    padded = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    windows = sliding_window_view(padded, (k, k), axis=(0, 1))  # (H, W, C_in, k, k)
    return np.einsum("hwcij,ijco->hwo", windows, kernel, optimize=True) + bias


def extract(extractor: Extractor, image: np.ndarray) -> np.ndarray:
    """Per-pixel features (H, W, D) for an (H, W, C) image."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != extractor.input_channels:
        raise ShapeError(
            f"Extractor expects (H, W, {extractor.input_channels}) images, got shape {image.shape}"
        )
    x = image
    for stage in extractor.stages:
        y = conv2d_same(x, stage.kernel, stage.bias)
        if stage.activation == "relu":
            y = np.maximum(y, 0.0)
        x = np.concatenate([x, y], axis=-1) if stage.keep_input else y
    return x if extractor.stages else x.copy()


def extractor_state(extractor: Extractor) -> Tuple[dict, dict]:
    """(metadata, arrays) for checkpointing."""
    meta = {
        "seed": extractor.seed,
        "input_channels": extractor.input_channels,
        "stages": [
            {"kind": s.kind, "activation": s.activation, "keep_input": s.keep_input} for s in extractor.stages
        ],
    }
    arrays = {}
    for i, stage in enumerate(extractor.stages):
        arrays[f"extractor.{i}.kernel"] = stage.kernel
        arrays[f"extractor.{i}.bias"] = stage.bias
    return meta, arrays


def extractor_from_state(meta: dict, arrays: dict) -> Extractor:
    stages = []
    for i, stage_meta in enumerate(meta["stages"]):
        kernel = np.array(arrays[f"extractor.{i}.kernel"])
        bias = np.array(arrays[f"extractor.{i}.bias"])
        kernel.setflags(write=False)
        bias.setflags(write=False)
        stages.append(
            Stage(
                kind=stage_meta["kind"],
                kernel=kernel,
                bias=bias,
                activation=stage_meta["activation"],
                keep_input=bool(stage_meta.get("keep_input", False)),
            )
        )
    return Extractor(stages=tuple(stages), seed=int(meta["seed"]), input_channels=int(meta["input_channels"]))
