"""Central finite-difference checks of the hand-written backward passes."""

from __future__ import annotations

import numpy as np

from roomclass.nn.functional import PROB_FLOOR
from roomclass.nn.layers import Layer
from roomclass.nn.sequential import Sequential

# gradients smaller than this are compared on an absolute scale
GRAD_SCALE_FLOOR = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), GRAD_SCALE_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def _numeric(f, arr: np.ndarray, eps: float, max_entries: int | None, rng) -> tuple[np.ndarray, np.ndarray]:
    flat = arr.reshape(-1)
    idx = np.arange(flat.size)
    if max_entries is not None and flat.size > max_entries:
        idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
    out = np.empty(idx.size)
    for j, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        out[j] = (up - down) / (2.0 * eps)
    return idx, out


def check_layer(layer: Layer, x: np.ndarray, eps: float = 1e-5, seed: int = 0, max_entries: int | None = None) -> dict:
    """Compare a layer's backward pass with finite differences of a random
    linear projection of its output.  Returns max relative error per input and
    per parameter (keys ``"input"`` and the parameter names)."""
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    out = layer.forward(x, train=True, rng=np.random.default_rng(seed))
    proj = rng.standard_normal(out.shape)

    def f():
        return float(np.sum(layer.forward(x, train=True, rng=np.random.default_rng(seed)) * proj))

    layer.forward(x, train=True, rng=np.random.default_rng(seed))
    gx = layer.backward(proj)
    grads = {k: v.copy() for k, v in layer.grads.items()}
    errors = {}
    idx, num = _numeric(f, x, eps, max_entries, rng)
    errors["input"] = relative_error(gx.reshape(-1)[idx], num)
    for k, p in layer.params.items():
        idx, num = _numeric(f, p, eps, max_entries, rng)
        errors[k] = relative_error(grads[k].reshape(-1)[idx], num)
    return errors


def grad_check(model: Sequential, x: np.ndarray, label, eps: float = 1e-5, seed: int = 0,
               max_entries: int | None = None) -> float:
    """Max relative error between backprop and central differences of the
    cross-entropy loss over every parameter of ``model``.

    Dropout masks are held fixed by reseeding the rng for every evaluation.
    ``max_entries`` caps the number of checked entries per parameter tensor.
    """
    x = np.asarray(x, dtype=np.float64)
    spec = getattr(model, "spec", None)
    if spec is not None and x.ndim == len(spec.input_shape):
        x = x[None]
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))

    def f():
        probs = model.forward(x, train=True, rng=np.random.default_rng(seed))
        picked = probs[np.arange(labels.size), labels]
        return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))

    model.loss_and_grad(x, labels, rng=np.random.default_rng(seed))
    analytic = {k: v.copy() for k, v in model.gradients().items()}
    rng = np.random.default_rng(seed + 1)
    worst = 0.0
    for k, p in model.parameters().items():
        idx, num = _numeric(f, p, eps, max_entries, rng)
        worst = max(worst, relative_error(analytic[k].reshape(-1)[idx], num))
    return worst

