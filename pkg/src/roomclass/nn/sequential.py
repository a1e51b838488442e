"""A plain layer stack with loss and gradient plumbing."""

from __future__ import annotations

import numpy as np

from roomclass.errors import DataError, NumericalError
from roomclass.nn.functional import PROB_FLOOR
from roomclass.nn.layers import Layer, Softmax


class Sequential:
    """Ordered list of layers.  Parameters are addressed as ``"<index>.<name>"``."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def forward(self, x, train: bool = False, rng=None, upto: int | None = None) -> np.ndarray:
        """Run layers ``0 .. upto-1`` (all by default).

        Raises :class:`NumericalError` naming the first layer that produces a
        non-finite activation.
        """
        out = np.asarray(x, dtype=np.float64)
        for i, layer in enumerate(self.layers[:upto]):
            out = layer.forward(out, train=train, rng=rng)
            if not np.all(np.isfinite(out)):
                raise NumericalError(f"non-finite activation at layer {i} ({layer.kind})")
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.grads.items()}

    def n_params(self) -> int:
        return int(sum(v.size for v in self.parameters().values()))

    def get_state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}

    def set_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(params) != set(state):
            raise DataError("parameter names do not match the model")
        for k, v in state.items():
            if params[k].shape != v.shape:
                raise DataError(f"{k}: shape {v.shape} != {params[k].shape}")
            params[k][...] = v

    def loss_and_grad(self, x, labels, rng=None) -> float:
        """Mean categorical cross-entropy of a batch; fills layer gradients.

        When the stack ends in softmax the combined gradient ``p - onehot`` is
        used directly, which stays exact even when a probability underflows.
        """
        labels = np.asarray(labels, dtype=np.int64)
        probs = self.forward(x, train=True, rng=rng)
        if labels.shape != (probs.shape[0],):
            raise DataError("one label per sample required")
        if labels.min() < 0 or labels.max() >= probs.shape[1]:
            raise DataError("label out of range")
        n = probs.shape[0]
        picked = probs[np.arange(n), labels]
        loss = float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))
        if not np.isfinite(loss):
            raise NumericalError("non-finite loss")
        if isinstance(self.layers[-1], Softmax):
            grad = probs.copy()
            grad[np.arange(n), labels] -= 1.0
            grad /= n
            for layer in reversed(self.layers[:-1]):
                grad = layer.backward(grad)
        else:
            grad = np.zeros_like(probs)
            grad[np.arange(n), labels] = -1.0 / (n * np.maximum(picked, PROB_FLOOR))
            self.backward(grad)
        return loss

    def loss(self, x, labels, batch_size: int = 64) -> float:
        """Mean cross-entropy in infer mode (no caching)."""
        labels = np.asarray(labels, dtype=np.int64)
        total = 0.0
        for s in range(0, len(labels), batch_size):
            p = self.forward(x[s : s + batch_size])
            total += float(np.sum(-np.log(np.maximum(p[np.arange(p.shape[0]), labels[s : s + batch_size]], PROB_FLOOR))))
        return total / len(labels)

    def predict_proba(self, x, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.concatenate([self.forward(x[s : s + batch_size]) for s in range(0, x.shape[0], batch_size)])
