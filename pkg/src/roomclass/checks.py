"""Finite-difference gradient suite over every layer kind and every
architecture at toy input shapes."""

from __future__ import annotations

import numpy as np

from roomclass.models import ARCHS, ModelSpec, build_model
from roomclass.nn import (
    AddChannel,
    AttentionPool,
    BiGRU,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    LastStep,
    MaxPool2D,
    Normalize,
    ReLU,
    Softmax,
    TimeDistributedDense,
    ToSequence,
    check_layer,
    grad_check,
)

DEFAULT_THRESHOLD = 1e-4
RECURRENT_THRESHOLD = 1e-3

TOY_INPUT = (12, 9)
TOY_CLASSES = 3
TOY_MODEL = dict(conv_filters=(3,), gru_units=4, head_units=5, cnn_dense=6, td_units=5, ff_hidden=(6, 6, 6))


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _layer_cases(rng):
    return {
        "dense": (Dense(5, 4, rng), rng.standard_normal((3, 5))),
        "time_distributed_dense": (TimeDistributedDense(5, 4, rng), rng.standard_normal((2, 6, 5))),
        "conv2d": (Conv2D(2, 3, (3, 3), rng), rng.standard_normal((2, 6, 5, 2))),
        "maxpool2d": (MaxPool2D((2, 2)), rng.standard_normal((2, 6, 6, 3))),
        "dropout": (Dropout(0.5), rng.standard_normal((3, 7))),
        "relu": (ReLU(), _away_from_zero(rng, (3, 7))),
        "softmax": (Softmax(), rng.standard_normal((3, 4))),
        "bigru": (BiGRU(3, 4, rng), rng.standard_normal((2, 5, 3))),
        "attention_pool": (AttentionPool(4, rng), rng.standard_normal((2, 5, 4))),
        "last_step": (LastStep(4), rng.standard_normal((2, 5, 8))),
        "flatten": (Flatten(), rng.standard_normal((2, 3, 4, 2))),
        "to_sequence": (ToSequence(), rng.standard_normal((2, 3, 4, 2))),
        "add_channel": (AddChannel(), rng.standard_normal((2, 3, 4))),
        "normalize": (Normalize(0.3, 2.0), rng.standard_normal((2, 3, 4))),
    }


def gradcheck_suite(seed: int = 0, eps: float = 1e-5) -> list[dict]:
    """Run every check; each row has ``name``, ``error`` and ``threshold``.

    Rows that involve a recurrent layer use the looser recurrent threshold.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for name, (layer, x) in _layer_cases(rng).items():
        errs = check_layer(layer, x, eps=eps, seed=seed)
        thr = RECURRENT_THRESHOLD if name == "bigru" else DEFAULT_THRESHOLD
        rows.append({"name": f"layer/{name}", "error": max(errs.values()), "threshold": thr})
    for arch in ARCHS:
        shape = (7,) if arch == "ff_baseline" else TOY_INPUT
        spec = ModelSpec(arch, shape, TOY_CLASSES, **TOY_MODEL)
        model = build_model(spec, seed=seed)
        x = rng.standard_normal((2, *shape))
        err = grad_check(model, x, [0, 2], eps=eps, seed=seed)
        thr = RECURRENT_THRESHOLD if arch in ("rnn", "att_rnn", "crnn", "att_crnn") else DEFAULT_THRESHOLD
        rows.append({"name": f"model/{arch}", "error": err, "threshold": thr})
    return rows
