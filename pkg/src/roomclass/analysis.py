"""Representation analyses.

Two questions are asked of a trained network and, as a reference, of an
untrained network with the same architecture:

* how well a linear read-out of the last convolutional stage predicts an
  acoustic parameter of the AIR (scored with the concordance correlation
  coefficient), and
* how the attention weights over recurrent time-steps correlate with the
  spectral centroid, bandwidth and roll-off of the input frames.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from roomclass.acoustics import acoustic_params
from roomclass.data import DatasetConfig, SpeechCorpus, build_utterance, spectrogram_sample
from roomclass.dsp import frame_features
from roomclass.errors import DataError
from roomclass.models import CONV_ARCHS, Model, build_model
from roomclass.nn import AdamState, adam_step

__all__ = [
    "pearson",
    "ccc",
    "extract_representation",
    "representation_size",
    "ProbeResult",
    "fit_linear_probe",
    "probe_split",
    "probe_from_features",
    "linear_probe",
    "attention_weights",
    "step_frame_spans",
    "step_features",
    "correlate_attention",
    "CorrelationReport",
    "attention_correlation",
    "FEATURE_NAMES",
    "PROBE_PARAMETERS",
]

FEATURE_NAMES = ("centroid", "bandwidth", "rolloff")
PROBE_PARAMETERS = ("t30", "t60", "drr")


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DataError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise DataError("need at least 2 values")
    return x, y


def pearson(x, y) -> float:
    """Pearson correlation; 0 when either input has zero variance."""
    x, y = _pair(x, y)
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def ccc(y, y_hat) -> float:
    """Concordance correlation coefficient with population variances.

    ``2 cov / (var_y + var_yhat + (mean_y - mean_yhat)^2)``, which equals
    ``2 r s_y s_yhat / (...)``; 0 when either input is constant.
    """
    y, y_hat = _pair(y, y_hat)
    vy, vh = float(np.var(y)), float(np.var(y_hat))
    if vy == 0.0 or vh == 0.0:
        return 0.0
    r = pearson(y, y_hat)
    return float(2.0 * r * np.sqrt(vy * vh) / (vy + vh + (y.mean() - y_hat.mean()) ** 2))


# -- linear probing ----------------------------------------------------------


def _require_conv(model: Model):
    if model.spec.arch not in CONV_ARCHS or model.conv_end is None:
        raise DataError(f"{model.spec.arch} has no convolutional stage to probe")


def representation_size(model: Model) -> int:
    """``D_c``: number of values in the last conv stage's output."""
    _require_conv(model)
    shape = tuple(model.spec.input_shape)
    for layer in model.layers[1 : model.conv_end]:
        shape = layer.output_shape(shape)
    return int(np.prod(shape))


def extract_representation(model: Model, spectrogram, batch_size: int = 32) -> np.ndarray:
    """Flattened output of the last conv/pool block (after input
    normalization, before any recurrent or dense layer).

    A single ``[N_f, K]`` input gives a vector of length ``D_c``; a batch
    gives ``[B, D_c]``.
    """
    _require_conv(model)
    X = np.asarray(spectrogram, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.shape[1:] != tuple(model.spec.input_shape):
        raise DataError(f"expected input {model.spec.input_shape}, got {X.shape[1:]}")
    out = [model.forward(X[s : s + batch_size], upto=model.conv_end).reshape(min(batch_size, X.shape[0] - s), -1)
           for s in range(0, X.shape[0], batch_size)]
    R = np.concatenate(out)
    return R[0] if single else R


@dataclass
class ProbeResult:
    parameter: str
    w: np.ndarray
    b: float
    ccc: float
    n_train: int
    n_test: int
    train_losses: list[float] = field(default_factory=list)
    predictions: np.ndarray | None = None
    targets: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "ccc": self.ccc,
            "b": self.b,
            "w_norm": float(np.linalg.norm(self.w)),
            "dimension": int(self.w.size),
            "n_train": self.n_train,
            "n_test": self.n_test,
            "final_train_loss": self.train_losses[-1] if self.train_losses else None,
        }


def fit_linear_probe(F, y, epochs: int = 200, batch_size: int = 16, lr: float = 1e-3, seed: int = 0):
    """Least-squares linear read-out ``y ~ w . f + b`` trained with Adam.

    Features and targets are standardized internally (statistics from this
    training set) and the returned ``w, b`` are mapped back to raw units.
    ``losses[e]`` is the mean squared error (in standardized units) over the
    whole training set after epoch ``e``.
    """
    F = np.asarray(F, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if F.ndim != 2 or y.shape != (F.shape[0],):
        raise DataError(f"probe shapes: F {F.shape}, y {y.shape}")
    mu_f, sd_f = F.mean(axis=0), F.std(axis=0)
    sd_f = np.where(sd_f > 0, sd_f, 1.0)
    mu_y, sd_y = float(y.mean()), float(y.std()) or 1.0
    Fs = (F - mu_f) / sd_f
    ys = (y - mu_y) / sd_y
    params = {"w": np.zeros(F.shape[1]), "b": np.zeros(1)}
    adam = AdamState(lr=lr)
    rng = np.random.default_rng(seed)
    n = len(ys)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for s in range(0, n, batch_size):
            idx = order[s : s + batch_size]
            err = Fs[idx] @ params["w"] + params["b"][0] - ys[idx]
            grads = {"w": 2.0 * Fs[idx].T @ err / len(idx), "b": np.array([2.0 * err.mean()])}
            adam_step(params, grads, adam)
        resid = Fs @ params["w"] + params["b"][0] - ys
        losses.append(float(resid @ resid / n))
    w = params["w"] / sd_f * sd_y
    b = mu_y + sd_y * params["b"][0] - float(w @ mu_f)
    return w, float(b), losses


def probe_split(groups, test_fraction: float = 0.25, seed: int = 0) -> np.ndarray:
    """Boolean held-out mask choosing whole groups (positions) at random
    until about ``test_fraction`` of the items are held out."""
    groups = np.asarray(groups)
    uniq = sorted(set(groups.tolist()))
    if len(uniq) < 2:
        raise DataError("probe split needs at least 2 positions")
    rng = np.random.default_rng(seed)
    held = np.zeros(groups.shape[0], dtype=bool)
    target = test_fraction * groups.shape[0]
    for g in rng.permutation(len(uniq)):
        if held.sum() >= target:
            break
        mask = groups == uniq[g]
        if (held | mask).all():
            continue
        held |= mask
    return held


def probe_from_features(F, y, groups, parameter: str = "drr", epochs: int = 200, batch_size: int = 16,
                        seed: int = 0) -> ProbeResult:
    """Fit on 75 % of the items (split by ``groups``) and score CCC on the rest."""
    F = np.asarray(F, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if F.shape[0] < 32:
        raise DataError(f"linear probe needs at least 32 AIRs, got {F.shape[0]}")
    held = probe_split(groups, 0.25, seed)
    w, b, losses = fit_linear_probe(F[~held], y[~held], epochs, batch_size, seed=seed)
    pred = F[held] @ w + b
    return ProbeResult(parameter, w, b, ccc(y[held], pred), int((~held).sum()), int(held.sum()), losses,
                       pred, y[held])


def linear_probe(model: Model, airs, corpus: SpeechCorpus, parameter: str, cfg: DatasetConfig,
                 seed: int = 0, epochs: int = 200, batch_size: int = 16) -> ProbeResult:
    """Probe ``model``'s conv representation for an acoustic parameter.

    Each AIR is rendered once (a fresh utterance from a training speaker),
    its target is estimated from the AIR itself, and the probe is split by
    position so no position contributes to both halves.
    """
    if parameter not in PROBE_PARAMETERS:
        raise DataError(f"unknown probe parameter {parameter!r}")
    airs = list(airs)
    if len(airs) < 32:
        raise DataError(f"linear probe needs at least 32 AIRs, got {len(airs)}")
    _require_conv(model)
    rng = np.random.default_rng(seed)
    speakers = corpus.ids("train")
    X, y, groups = [], [], []
    for rec in airs:
        spk = speakers[int(rng.integers(len(speakers)))]
        X.append(spectrogram_sample(build_utterance(corpus.speakers[spk], cfg, rng), rec.air, cfg))
        y.append(getattr(acoustic_params(rec.air), parameter))
        groups.append("/".join(rec.block))
    F = extract_representation(model, np.stack(X))
    return probe_from_features(F, y, groups, parameter, epochs, batch_size, seed)


# -- attention analysis -------------------------------------------------------


def attention_weights(model: Model, X) -> np.ndarray:
    """Attention vectors ``[B, T_r]`` for a batch of spectrograms."""
    if model.attention_index is None:
        raise DataError(f"{model.spec.arch} has no attention layer")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    Z = model.forward(X, upto=model.attention_index)
    alphas = model.layers[model.attention_index].weights(Z)
    if np.any(alphas < 0) or np.max(np.abs(alphas.sum(axis=1) - 1.0)) > 1e-6:
        raise DataError("attention weights violate the simplex contract")
    return alphas


def step_frame_spans(model: Model, n_steps: int) -> list[tuple[int, int]]:
    """Inclusive STFT-frame span feeding each recurrent step.

    Walks the layers before the recurrent layer backwards using their
    receptive-field rule; spans are clipped to the spectrogram length.
    """
    n_frames = model.spec.input_shape[0]
    front = model.layers[: model.attention_index]
    spans = []
    for s in range(n_steps):
        a, b = s, s
        for layer in reversed(front):
            a, b = layer.time_span(a, b)
        spans.append((min(a, n_frames - 1), min(b, n_frames - 1)))
    return spans


def step_features(spectrogram: np.ndarray, bin_freqs, spans, rolloff_fraction: float = 0.85) -> np.ndarray:
    """Per-frame centroid, bandwidth and roll-off averaged over each span.

    The log-power spectrogram is turned back into linear magnitudes first.
    """
    mags = np.sqrt(np.exp(np.asarray(spectrogram, dtype=np.float64)))
    per_frame = frame_features(mags, bin_freqs, rolloff_fraction)
    return np.array([per_frame[a : b + 1].mean(axis=0) for a, b in spans])


def correlate_attention(alphas, features) -> dict:
    """Pooled and mean per-utterance Pearson r between attention and each
    feature.  ``alphas`` is a list of ``[T]`` vectors, ``features`` a list of
    ``[T, 3]`` matrices."""
    A = np.concatenate([np.asarray(a, dtype=np.float64) for a in alphas])
    Fm = np.concatenate([np.asarray(f, dtype=np.float64) for f in features])
    pooled = {n: pearson(Fm[:, j], A) for j, n in enumerate(FEATURE_NAMES)}
    per_utt = {
        n: float(np.mean([pearson(np.asarray(f)[:, j], a) for a, f in zip(alphas, features)]))
        for j, n in enumerate(FEATURE_NAMES)
    }
    return {"pooled": pooled, "per_utterance": per_utt}


@dataclass
class CorrelationReport:
    trained: dict
    random_init: dict
    random_init_seeds: list[dict]
    n_samples: int
    n_steps: int
    rows: list[tuple] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "trained": self.trained,
            "random_init": self.random_init,
            "random_init_seeds": self.random_init_seeds,
            "n_samples": self.n_samples,
            "n_steps": self.n_steps,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def write_rows(self, path) -> None:
        """Per (sample, step) attention and features, for plotting."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "step", "alpha", *FEATURE_NAMES])
            for row in self.rows:
                w.writerow([row[0], row[1], *(repr(float(v)) for v in row[2:])])


def attention_correlation(model: Model, X, bin_freqs, random_seeds=(1, 2, 3, 4, 5),
                          rolloff_fraction: float = 0.85) -> CorrelationReport:
    """Correlate attention with spectral features for a trained model and
    for untrained models of identical architecture.

    The random-initialization reference is the mean over ``random_seeds``
    of the per-seed correlations (each untrained model reuses the trained
    model's input normalization); the per-seed values are kept as well.
    """
    if model.attention_index is None:
        raise DataError(f"{model.spec.arch} has no attention layer")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    alphas = attention_weights(model, X)
    n_steps = alphas.shape[1]
    spans = step_frame_spans(model, n_steps)
    feats = [step_features(x, bin_freqs, spans, rolloff_fraction) for x in X]
    trained = correlate_attention(list(alphas), feats)
    per_seed = []
    norm = model.normalizer
    for s in random_seeds:
        rand = build_model(model.spec, seed=int(s))
        if norm is not None:
            rand.normalizer.mean, rand.normalizer.std = norm.mean, norm.std
        per_seed.append(correlate_attention(list(attention_weights(rand, X)), feats))
    random_init = {
        kind: {n: float(np.mean([p[kind][n] for p in per_seed])) for n in FEATURE_NAMES}
        for kind in ("pooled", "per_utterance")
    } if per_seed else {}
    rows = [(i, t, alphas[i, t], *feats[i][t]) for i in range(X.shape[0]) for t in range(n_steps)]
    return CorrelationReport(trained, random_init, per_seed, int(X.shape[0]), int(n_steps), rows)

