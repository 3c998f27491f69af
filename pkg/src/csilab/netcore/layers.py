"""Declarative layer set and shape algebra.

Networks are ordered layer sequences over a fixed vocabulary: conv2d, dense,
batchnorm, leaky_relu, tanh, dropout, upsample_nearest_2x, mean_reduce,
reshape, flatten, plus a Residual composite (out = x + inner(x)) whose inner
layers come from the same vocabulary. Shapes exclude the batch dimension and
every transition is checked when the NetworkSpec is built; nothing broadcasts
silently at forward time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Tuple, Union

from ..errors import ShapeError

Shape = Tuple[int, ...]


@dataclass(frozen=True)
class Conv2d:
    """3x3 convolution, stride 1 same-padding by default; stride 2 halves H and W."""

    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("conv2d channel counts must be positive")
        if self.kernel % 2 != 1:
            raise ValueError("conv2d kernel must be odd for same-padding")
        if self.stride not in (1, 2):
            raise ValueError("conv2d stride must be 1 or 2")

    @property
    def padding(self) -> int:
        return self.kernel // 2


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int

    def __post_init__(self):
        if self.in_features < 1 or self.out_features < 1:
            raise ValueError("dense feature counts must be positive")


@dataclass(frozen=True)
class BatchNorm:
    """2d batch normalization over the channel axis of a (C, H, W) input."""

    num_features: int


@dataclass(frozen=True)
class LeakyReLU:
    slope: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.slope < 1.0:
            raise ValueError("leaky_relu slope must lie in (0, 1)")


@dataclass(frozen=True)
class Tanh:
    pass


@dataclass(frozen=True)
class Dropout:
    """Inverted dropout: train-time activations are scaled by 1/(1-p)."""

    p: float

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ValueError("dropout probability must lie in [0, 1)")


@dataclass(frozen=True)
class UpsampleNearest2x:
    """Nearest-neighbor upsampling that doubles the last two dimensions."""


@dataclass(frozen=True)
class MeanReduce:
    """Average over the last two dimensions, keeping leading dimensions."""


@dataclass(frozen=True)
class Reshape:
    shape: Shape


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Residual:
    """Additive skip around an inner layer sequence; inner must preserve shape."""

    inner: Tuple["Layer", ...]


Layer = Union[
    Conv2d,
    Dense,
    BatchNorm,
    LeakyReLU,
    Tanh,
    Dropout,
    UpsampleNearest2x,
    MeanReduce,
    Reshape,
    Flatten,
    Residual,
]


def layer_kind(layer: Layer) -> str:
    return type(layer).__name__


def out_shape(layer: Layer, shape: Shape) -> Shape:
    """Shape produced by `layer` on a (batchless) input of `shape`.

    Raises ShapeError when the layer cannot accept the shape.
    """
    kind = layer_kind(layer)
    if isinstance(layer, Conv2d):
        if len(shape) != 3:
            raise ShapeError(f"{kind} needs a (C, H, W) input, got {shape}")
        c, h, w = shape
        if c != layer.in_channels:
            raise ShapeError(f"{kind} expects {layer.in_channels} channels, got {c}")
        if layer.stride == 1:
            return (layer.out_channels, h, w)
        return (layer.out_channels, math.ceil(h / 2), math.ceil(w / 2))
    if isinstance(layer, Dense):
        if len(shape) != 1:
            raise ShapeError(f"{kind} needs a flat input, got {shape}")
        if shape[0] != layer.in_features:
            raise ShapeError(f"{kind} expects {layer.in_features} features, got {shape[0]}")
        return (layer.out_features,)
    if isinstance(layer, BatchNorm):
        if len(shape) != 3 or shape[0] != layer.num_features:
            raise ShapeError(
                f"{kind}({layer.num_features}) cannot normalize input of shape {shape}"
            )
        return shape
    if isinstance(layer, (LeakyReLU, Tanh, Dropout)):
        return shape
    if isinstance(layer, UpsampleNearest2x):
        if len(shape) < 2:
            raise ShapeError(f"{kind} needs at least 2 trailing dims, got {shape}")
        return shape[:-2] + (shape[-2] * 2, shape[-1] * 2)
    if isinstance(layer, MeanReduce):
        if len(shape) < 2:
            raise ShapeError(f"{kind} needs at least 2 trailing dims, got {shape}")
        return shape[:-2]
    if isinstance(layer, Reshape):
        if math.prod(shape) != math.prod(layer.shape):
            raise ShapeError(f"{kind} to {layer.shape} cannot hold {shape} elements")
        return tuple(layer.shape)
    if isinstance(layer, Flatten):
        return (math.prod(shape),)
    if isinstance(layer, Residual):
        inner_out = propagate(layer.inner, shape, where="residual inner")
        if inner_out != shape:
            raise ShapeError(
                f"residual inner sequence maps {shape} to {inner_out}; skip needs equal shapes"
            )
        return shape
    raise ShapeError(f"unknown layer kind {kind}")


def propagate(layers: Tuple[Layer, ...], shape: Shape, where: str = "network") -> Shape:
    for i, layer in enumerate(layers):
        try:
            shape = out_shape(layer, shape)
        except ShapeError as exc:
            raise ShapeError(f"{where} layer {i} ({layer_kind(layer)}): {exc}") from exc
    return shape


def propagate_trace(spec: "NetworkSpec") -> Tuple[Shape, ...]:
    """Every boundary shape from the input through each layer's output."""
    shapes = [tuple(spec.input_shape)]
    for layer in spec.layers:
        shapes.append(out_shape(layer, shapes[-1]))
    return tuple(shapes)


@dataclass(frozen=True)
class NetworkSpec:
    """Validated layer sequence with declared input and output shapes."""

    layers: Tuple[Layer, ...]
    input_shape: Shape
    output_shape: Shape = field(default=())

    def __post_init__(self):
        derived = propagate(tuple(self.layers), tuple(self.input_shape))
        declared = tuple(self.output_shape)
        if declared and declared != derived:
            raise ShapeError(
                f"declared output shape {declared} but layers produce {derived}"
            )
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "output_shape", derived)
