"""Candidate room classifiers and the FDRT baselines.

Five spectrogram networks (``cnn``, ``rnn``, ``att_rnn``, ``crnn``,
``att_crnn``) plus the feed-forward FDRT baseline ``ff_baseline`` are built
from a :class:`ModelSpec`.  The Gaussian naive Bayes baseline lives in
:func:`fit_nbc` / :func:`predict_nbc`.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from roomclass.errors import DataError
from roomclass.nn.layers import (
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
    layer_from_config,
)
from roomclass.nn.optim import AdamState
from roomclass.nn.sequential import Sequential

ARCHS = ("cnn", "rnn", "att_rnn", "crnn", "att_crnn", "ff_baseline")
CONV_ARCHS = ("cnn", "crnn", "att_crnn")
ATTENTION_ARCHS = ("att_rnn", "att_crnn")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description.

    ``input_shape`` is ``(N_f, K)`` for spectrogram networks and ``(D,)`` for
    ``ff_baseline``.  Layer sizes default to the reference configuration and
    can be overridden for desk-scale runs.
    """

    arch: str
    input_shape: tuple
    n_classes: int
    conv_filters: tuple = (32, 32, 64)
    kernel: tuple = (3, 3)
    pool: tuple = (2, 2)
    cnn_dense: int = 128
    td_units: int = 64
    gru_units: int = 64
    head_units: int = 64
    dropout: float = 0.5
    ff_hidden: tuple = (32, 32, 32)
    ff_dropout: float = 0.1

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise DataError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if self.n_classes < 2:
            raise DataError("n_classes must be >= 2")
        shape = tuple(int(v) for v in self.input_shape)
        if not shape or any(v <= 0 for v in shape):
            raise DataError(f"input_shape must be positive, got {self.input_shape}")
        expected = 1 if self.arch == "ff_baseline" else 2
        if len(shape) != expected:
            raise DataError(f"{self.arch} needs a {expected}-D input_shape, got {shape}")
        object.__setattr__(self, "input_shape", shape)
        for name in ("conv_filters", "kernel", "pool", "ff_hidden"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DataError(f"unknown ModelSpec keys {sorted(unknown)}")
        return cls(**d)


class Model(Sequential):
    """A :class:`Sequential` that remembers its spec and the layer indices the
    analyses need: ``conv_end`` (one past the last conv-stage layer) and
    ``attention_index``."""

    def __init__(self, spec: ModelSpec, layers, conv_end=None, attention_index=None):
        super().__init__(layers)
        self.spec = spec
        self.conv_end = conv_end
        self.attention_index = attention_index

    @property
    def normalizer(self) -> Normalize | None:
        first = self.layers[0]
        return first if isinstance(first, Normalize) else None

    def fit_normalization(self, X: np.ndarray) -> None:
        """Set the input scaling to the global mean / std of ``X``."""
        norm = self.normalizer
        if norm is not None:
            std = float(np.std(X))
            norm.mean, norm.std = float(np.mean(X)), std if std > 0 else 1.0


def _conv_stack(spec: ModelSpec, rng) -> list:
    layers = [AddChannel()]
    channels = 1
    for filters in spec.conv_filters:
        layers += [Conv2D(channels, filters, spec.kernel, rng), ReLU(), MaxPool2D(spec.pool)]
        channels = filters
    return layers


def _shape_after(layers, in_shape):
    shape = tuple(in_shape)
    for layer in layers:
        shape = layer.output_shape(shape)
        if any(v < 1 for v in shape):
            return None
    return shape


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    """Instantiate the layer stack for ``spec`` with seeded Glorot init.

    Raises :class:`DataError` (reporting the minimum usable input shape) if the
    pooling stack would shrink the input to nothing.
    """
    rng = np.random.default_rng(seed)
    C = spec.n_classes
    conv_end = attention_index = None
    if spec.arch == "ff_baseline":
        layers = [Normalize()]
        width = spec.input_shape[0]
        for units in spec.ff_hidden:
            layers += [Dropout(spec.ff_dropout), Dense(width, units, rng), ReLU()]
            width = units
        layers += [Dense(width, C, rng), Softmax()]
        return Model(spec, layers)

    minimum = minimum_input_shape(spec)
    if spec.input_shape[0] < minimum[0] or spec.input_shape[1] < minimum[1]:
        raise DataError(f"{spec.arch}: input_shape {spec.input_shape} below minimum {minimum}")

    layers = [Normalize()]
    if spec.arch in CONV_ARCHS:
        layers += _conv_stack(spec, rng)
        conv_end = len(layers)
        t, f, c = _shape_after(layers[1:], spec.input_shape)
        if spec.arch == "cnn":
            layers += [
                Flatten(),
                Dropout(spec.dropout),
                Dense(c * t * f, spec.cnn_dense, rng),
                ReLU(),
                Dense(spec.cnn_dense, C, rng),
                Softmax(),
            ]
            return Model(spec, layers, conv_end=conv_end)
        layers += [ToSequence()]
        seq_features = c * f
    else:
        layers += [TimeDistributedDense(spec.input_shape[1], spec.td_units, rng), ReLU()]
        seq_features = spec.td_units

    H = spec.gru_units
    layers.append(BiGRU(seq_features, H, rng))
    if spec.arch in ATTENTION_ARCHS:
        attention_index = len(layers)
        layers.append(AttentionPool(2 * H, rng))
    else:
        layers.append(LastStep(H))
    layers += [
        Dropout(spec.dropout),
        Dense(2 * H, spec.head_units, rng),
        ReLU(),
        Dense(spec.head_units, C, rng),
        Softmax(),
    ]
    return Model(spec, layers, conv_end=conv_end, attention_index=attention_index)


def minimum_input_shape(spec: ModelSpec) -> tuple[int, int]:
    """Smallest ``(N_f, K)`` the architecture's conv/pool stack accepts."""
    if spec.arch in ("rnn", "att_rnn"):
        return (1, 1)
    if spec.arch == "ff_baseline":
        return (1,)
    probe = _conv_stack(spec, np.random.default_rng(0))

    def ok(n, axis):
        big = [10**6, 10**6]
        big[axis] = n
        return _shape_after(probe, tuple(big)) is not None

    return tuple(next(n for n in range(1, 10**5) if ok(n, axis)) for axis in (0, 1))


def predict(model: Model, spectrogram) -> np.ndarray:
    """Class probabilities for one spectrogram (or a batch of them)."""
    values = getattr(spectrogram, "values", spectrogram)
    x = np.asarray(values, dtype=np.float64)
    single = x.shape == model.spec.input_shape
    if single:
        x = x[None]
    if x.shape[1:] != model.spec.input_shape:
        raise DataError(f"input shape {x.shape[1:] if not single else x.shape} != {model.spec.input_shape}")
    probs = model.predict_proba(x)
    return probs[0] if single else probs


def predict_class(model: Model, spectrogram) -> np.ndarray | int:
    """Argmax class; ties go to the lowest index."""
    probs = predict(model, spectrogram)
    return int(np.argmax(probs)) if probs.ndim == 1 else np.argmax(probs, axis=1)


# -- checkpoint container ---------------------------------------------------


def save_checkpoint(path, model: Model, adam: AdamState | None = None, seed: int | None = None,
                    history: dict | None = None) -> None:
    """Write a ``.npz`` checkpoint (layout in the README).

    Arrays are stored as little-endian float64: ``param/<i>.<name>`` for
    parameters and ``adam_m/...``, ``adam_v/...`` for optimizer moments.  The
    ``meta`` entry is UTF-8 JSON holding the format version, the model spec,
    layer kinds/configs, Adam hyperparameters and step, the seed and the
    training history.
    """
    meta = {
        "format": "roomclass-checkpoint",
        "version": CHECKPOINT_VERSION,
        "spec": model.spec.to_dict(),
        "layers": [{"kind": l.kind, "config": l.config()} for l in model.layers],
        "conv_end": model.conv_end,
        "attention_index": model.attention_index,
        "adam": None if adam is None else {**adam.hyper(), "t": adam.t},
        "seed": seed,
        "history": history or {},
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for k, v in model.parameters().items():
        arrays[f"param/{k}"] = v.astype("<f8")
    if adam is not None:
        for k in adam.m:
            arrays[f"adam_m/{k}"] = adam.m[k].astype("<f8")
            arrays[f"adam_v/{k}"] = adam.v[k].astype("<f8")
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[Model, dict]:
    """Inverse of :func:`save_checkpoint`; returns the model and a dict with
    ``adam`` (an :class:`AdamState` or None), ``seed`` and ``history``."""
    with np.load(Path(path)) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != "roomclass-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint format/version")
        spec = ModelSpec.from_dict(meta["spec"])
        layers = [layer_from_config(l["kind"], l["config"]) for l in meta["layers"]]
        model = Model(spec, layers, meta["conv_end"], meta["attention_index"])
        model.set_state({k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")})
        adam = None
        if meta["adam"] is not None:
            hyper = dict(meta["adam"])
            t = hyper.pop("t")
            adam = AdamState(**hyper, t=t)
            for k in data.files:
                if k.startswith("adam_m/"):
                    name = k[len("adam_m/"):]
                    adam.m[name] = data[k].copy()
                    adam.v[name] = data[f"adam_v/{name}"].copy()
    return model, {"adam": adam, "seed": meta["seed"], "history": meta["history"]}


# -- Gaussian naive Bayes baseline -------------------------------------------


@dataclass
class NbcModel:
    classes: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_priors: np.ndarray
    var_floor: float = 1e-8
    feature_names: list = field(default_factory=list)

    def log_posteriors(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        diff = X[:, None, :] - self.means[None]
        ll = -0.5 * np.sum(np.log(2 * np.pi * self.variances)[None] + diff**2 / self.variances[None], axis=2)
        return ll + self.log_priors[None]


def fit_nbc(features, labels, var_floor: float = 1e-8) -> NbcModel:
    """Per-class diagonal Gaussians with empirical class priors."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError("features must be [M, D] with one label per row")
    classes, counts = np.unique(y, return_counts=True)
    if np.any(counts < 2):
        raise DataError(f"every class needs >= 2 samples; got counts {dict(zip(classes.tolist(), counts.tolist()))}")
    means = np.stack([X[y == c].mean(axis=0) for c in classes])
    variances = np.maximum(np.stack([X[y == c].var(axis=0) for c in classes]), var_floor)
    return NbcModel(classes, means, variances, np.log(counts / counts.sum()), var_floor)


def predict_nbc(model: NbcModel, features) -> np.ndarray:
    """Class label(s) maximising log prior + log likelihood; ties go to the
    first class in sorted order."""
    post = model.log_posteriors(features)
    return model.classes[np.argmax(post, axis=1)]
