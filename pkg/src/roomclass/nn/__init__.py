"""Minimal numpy neural-network engine with hand-derived backpropagation."""

from roomclass.nn.functional import (
    AttentionOutput,
    attention_pool,
    batch_cross_entropy,
    cross_entropy,
    softmax,
    time_distributed_dense,
)
from roomclass.nn.gradcheck import check_layer, grad_check, relative_error
from roomclass.nn.layers import (
    LAYER_TYPES,
    AddChannel,
    AttentionPool,
    BiGRU,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    LastStep,
    Layer,
    MaxPool2D,
    Normalize,
    ReLU,
    Softmax,
    TimeDistributedDense,
    ToSequence,
    layer_from_config,
)
from roomclass.nn.optim import AdamState, adam_step
from roomclass.nn.sequential import Sequential

__all__ = [
    "AttentionOutput",
    "attention_pool",
    "batch_cross_entropy",
    "cross_entropy",
    "softmax",
    "time_distributed_dense",
    "check_layer",
    "grad_check",
    "relative_error",
    "LAYER_TYPES",
    "AddChannel",
    "AttentionPool",
    "BiGRU",
    "Conv2D",
    "Dense",
    "Dropout",
    "Flatten",
    "LastStep",
    "Layer",
    "MaxPool2D",
    "Normalize",
    "ReLU",
    "Softmax",
    "TimeDistributedDense",
    "ToSequence",
    "layer_from_config",
    "AdamState",
    "adam_step",
    "Sequential",
]
