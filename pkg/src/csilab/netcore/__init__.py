"""Deterministic network substrate: layers, parameters, RNG streams, Adam."""

from .layers import (
    BatchNorm,
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    Layer,
    LeakyReLU,
    MeanReduce,
    NetworkSpec,
    Reshape,
    Residual,
    Tanh,
    UpsampleNearest2x,
    layer_kind,
    out_shape,
    propagate,
)
from .network import Network
from .optim import AdamConfig, make_adam
from .params import (
    ParameterSet,
    count_params,
    deserialize_params,
    payload_bytes,
    serialize_params,
)
from .rng import STREAM_NAMES, RandomState, derive_seed

__all__ = [
    "AdamConfig",
    "BatchNorm",
    "Conv2d",
    "Dense",
    "Dropout",
    "Flatten",
    "Layer",
    "LeakyReLU",
    "MeanReduce",
    "Network",
    "NetworkSpec",
    "ParameterSet",
    "RandomState",
    "Reshape",
    "Residual",
    "STREAM_NAMES",
    "Tanh",
    "UpsampleNearest2x",
    "count_params",
    "derive_seed",
    "deserialize_params",
    "layer_kind",
    "make_adam",
    "out_shape",
    "payload_bytes",
    "propagate",
    "serialize_params",
]
