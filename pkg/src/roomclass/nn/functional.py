"""Stateless building blocks shared by the layers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from roomclass.errors import DataError

PROB_FLOOR = 1e-12


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def time_distributed_dense(X: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Apply ``y_i = W x_i + b`` to every row ``x_i`` of ``X``.

    ``X`` is ``[..., N_f, D_x]``, ``W`` is ``[D_y, D_x]`` and ``b`` is ``[D_y]``.
    """
    X = np.asarray(X, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or X.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise DataError(f"shape mismatch: X {X.shape}, W {W.shape}, b {b.shape}")
    return X @ W.T + b


@dataclass(frozen=True)
class AttentionOutput:
    context: np.ndarray
    alphas: np.ndarray


def attention_scores(Z: np.ndarray, w: np.ndarray, b) -> np.ndarray:
    """Scalar score per time-step: ``tanh(w . zeta_i + b)``."""
    return np.tanh(Z @ w + b)


def attention_pool(Z: np.ndarray, w: np.ndarray, b=0.0) -> AttentionOutput:
    """Softmax attention over the rows of ``Z`` (``[N_i, D]`` or ``[B, N_i, D]``).

    Returns the context vector ``sum_i alpha_i zeta_i`` and the weights.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim not in (2, 3) or Z.shape[-2] < 1 or Z.shape[-1] != np.shape(w)[0]:
        raise DataError(f"attention_pool: bad shapes Z {Z.shape}, w {np.shape(w)}")
    b = float(np.asarray(b).reshape(-1)[0])
    alphas = softmax(attention_scores(Z, w, b), axis=-1)
    context = np.einsum("...n,...nd->...d", alphas, Z)
    return AttentionOutput(context, alphas)


def cross_entropy(probs, label: int) -> float:
    """``-log(probs[label])`` with the probability floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1:
        raise DataError("cross_entropy expects a 1-D probability vector")
    if not 0 <= int(label) < probs.shape[0] or int(label) != label:
        raise DataError(f"label {label} out of range for {probs.shape[0]} classes")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-6:
        raise DataError("probs must be non-negative and sum to 1")
    return float(-np.log(max(probs[int(label)], PROB_FLOOR)))


def batch_cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy over a ``[B, C]`` batch."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise DataError("label out of range")
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))
