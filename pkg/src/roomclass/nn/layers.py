"""Layers with explicit forward and backward passes.

Every layer maps a batch-first array to a batch-first array.  ``forward``
in train mode caches what ``backward`` needs; infer mode never writes to
the layer, so a fitted model can be shared between threads for prediction.
``backward`` returns the gradient w.r.t. the input and stores parameter
gradients in ``layer.grads`` under the same keys as ``layer.params``.
"""

from __future__ import annotations

import numpy as np

from roomclass.errors import DataError
from roomclass.nn.functional import sigmoid, softmax

__all__ = [
    "Layer",
    "Dense",
    "TimeDistributedDense",
    "Conv2D",
    "MaxPool2D",
    "Dropout",
    "ReLU",
    "Softmax",
    "BiGRU",
    "AttentionPool",
    "LastStep",
    "Flatten",
    "ToSequence",
    "AddChannel",
    "Normalize",
    "LAYER_TYPES",
    "layer_from_config",
    "glorot_uniform",
]


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple) -> tuple:
        return tuple(in_shape)

    def config(self) -> dict:
        return {}

    def time_span(self, start: int, stop: int) -> tuple[int, int]:
        """Input time indices (inclusive) that feed output steps ``start..stop``."""
        return start, stop

    def _need_cache(self):
        if self._cache is None:
            raise DataError(f"{self.kind}: backward called without a train-mode forward")
        return self._cache

    def _store(self, train: bool, cache):
        if train:
            self._cache = cache

    def __repr__(self):
        cfg = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{type(self).__name__}({cfg})"


class Dense(Layer):
    """``y = x W^T + b`` with ``W`` of shape ``[units, in_features]``."""

    kind = "dense"

    def __init__(self, in_features: int, units: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.in_features, self.units = int(in_features), int(units)
        rng = rng or np.random.default_rng(0)
        self.params = {
            "W": glorot_uniform(rng, (self.units, self.in_features), self.in_features, self.units),
            "b": np.zeros(self.units),
        }

    def forward(self, x, train=False, rng=None):
        if x.shape[-1] != self.in_features:
            raise DataError(f"{self.kind}: expected last dim {self.in_features}, got {x.shape}")
        self._store(train, x)
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, grad):
        x = self._need_cache()
        x2 = x.reshape(-1, self.in_features)
        g2 = grad.reshape(-1, self.units)
        self.grads = {"W": g2.T @ x2, "b": g2.sum(axis=0)}
        return grad @ self.params["W"]

    def output_shape(self, in_shape):
        return tuple(in_shape[:-1]) + (self.units,)

    def config(self):
        return {"in_features": self.in_features, "units": self.units}


class TimeDistributedDense(Dense):
    """The same affine map applied to every time-step of a ``[B, T, D]`` input."""

    kind = "time_distributed_dense"

    def forward(self, x, train=False, rng=None):
        if x.ndim != 3:
            raise DataError(f"{self.kind}: expected [B, T, D] input, got {x.shape}")
        return super().forward(x, train, rng)


def _im2col(x: np.ndarray, kh: int, kw: int, ho: int, wo: int) -> np.ndarray:
    """``[b, ho, wo, kh*kw*C]`` patches, tap-major then channel."""
    return np.concatenate([x[:, i : i + ho, j : j + wo, :] for i in range(kh) for j in range(kw)], axis=-1)


class Conv2D(Layer):
    """Valid 2-D cross-correlation, stride 1, on channels-last ``[B, T, F, C]``.

    Weights are stored as ``[filters, in_channels, kh, kw]``.  Patches are
    unrolled a few samples at a time to bound memory.
    """

    kind = "conv2d"
    chunk_elems = 1 << 20

    def __init__(self, in_channels: int, filters: int, kernel=(3, 3), rng=None):
        super().__init__()
        self.in_channels, self.filters = int(in_channels), int(filters)
        self.kernel = (int(kernel[0]), int(kernel[1]))
        kh, kw = self.kernel
        rng = rng or np.random.default_rng(0)
        self.params = {
            "W": glorot_uniform(
                rng, (self.filters, self.in_channels, kh, kw), self.in_channels * kh * kw, self.filters * kh * kw
            ),
            "b": np.zeros(self.filters),
        }

    def output_shape(self, in_shape):
        h, w, c = in_shape
        return (h - self.kernel[0] + 1, w - self.kernel[1] + 1, self.filters)

    def _matrix(self):
        kh, kw = self.kernel
        return self.params["W"].transpose(2, 3, 1, 0).reshape(kh * kw * self.in_channels, self.filters)

    def _step(self, ho, wo):
        return max(1, self.chunk_elems // (ho * wo * self.kernel[0] * self.kernel[1] * self.in_channels))

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise DataError(f"{self.kind}: expected [B, T, F, {self.in_channels}], got {x.shape}")
        kh, kw = self.kernel
        ho, wo = x.shape[1] - kh + 1, x.shape[2] - kw + 1
        if ho < 1 or wo < 1:
            raise DataError(f"{self.kind}: input {x.shape[1:3]} smaller than kernel {self.kernel}")
        W2 = self._matrix()
        out = np.empty((x.shape[0], ho, wo, self.filters))
        step = self._step(ho, wo)
        for s in range(0, x.shape[0], step):
            np.matmul(_im2col(x[s : s + step], kh, kw, ho, wo), W2, out=out[s : s + step])
        out += self.params["b"]
        self._store(train, x)
        return out

    def backward(self, grad):
        x = self._need_cache()
        kh, kw = self.kernel
        C = self.in_channels
        ho, wo = grad.shape[1], grad.shape[2]
        W2 = self._matrix()
        gW2 = np.zeros_like(W2)
        gx = np.zeros_like(x)
        step = self._step(ho, wo)
        for s in range(0, x.shape[0], step):
            g = grad[s : s + step]
            cols = _im2col(x[s : s + step], kh, kw, ho, wo)
            gW2 += cols.reshape(-1, cols.shape[-1]).T @ g.reshape(-1, self.filters)
            gcols = g @ W2.T
            gxs = gx[s : s + step]
            t = 0
            for i in range(kh):
                for j in range(kw):
                    gxs[:, i : i + ho, j : j + wo, :] += gcols[..., t * C : (t + 1) * C]
                    t += 1
        gW = gW2.reshape(kh, kw, C, self.filters).transpose(3, 2, 0, 1)
        self.grads = {"W": np.ascontiguousarray(gW), "b": grad.sum(axis=(0, 1, 2))}
        return gx

    def config(self):
        return {"in_channels": self.in_channels, "filters": self.filters, "kernel": list(self.kernel)}

    def time_span(self, start, stop):
        return start, stop + self.kernel[0] - 1


class MaxPool2D(Layer):
    """Non-overlapping window maximum over the time and frequency axes of
    ``[B, T, F, C]``.  Trailing rows/columns that do not fill a window are
    dropped; the gradient goes to the first maximal element of each window."""

    kind = "maxpool2d"

    def __init__(self, pool=(2, 2)):
        super().__init__()
        self.pool = (int(pool[0]), int(pool[1]))

    def output_shape(self, in_shape):
        h, w, c = in_shape
        return (h // self.pool[0], w // self.pool[1], c)

    def _views(self, x, ho, wo):
        ph, pw = self.pool
        return [x[:, i : ho * ph : ph, j : wo * pw : pw] for i in range(ph) for j in range(pw)]

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4:
            raise DataError(f"{self.kind}: expected [B, T, F, C], got {x.shape}")
        ph, pw = self.pool
        ho, wo = x.shape[1] // ph, x.shape[2] // pw
        if ho < 1 or wo < 1:
            raise DataError(f"{self.kind}: input {x.shape[1:3]} smaller than pool {self.pool}")
        views = self._views(x, ho, wo)
        out = views[0].copy()
        for v in views[1:]:
            np.maximum(out, v, out=out)
        self._store(train, (x, out))
        return out

    def backward(self, grad):
        x, out = self._need_cache()
        ho, wo = out.shape[1], out.shape[2]
        gx = np.zeros_like(x)
        taken = np.zeros(out.shape, dtype=bool)
        for v, gv in zip(self._views(x, ho, wo), self._views(gx, ho, wo)):
            hit = v == out
            hit &= ~taken
            np.copyto(gv, grad, where=hit)
            taken |= hit
        return gx

    def config(self):
        return {"pool": list(self.pool)}

    def time_span(self, start, stop):
        return start * self.pool[0], stop * self.pool[0] + self.pool[0] - 1


class Dropout(Layer):
    """Inverted dropout: active only in train mode, scaled by ``1 / (1 - rate)``."""

    kind = "dropout"

    def __init__(self, rate: float = 0.5):
        super().__init__()
        if not 0 <= rate < 1:
            raise DataError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0:
            self._store(train, None)
            return x
        if rng is None:
            raise DataError("dropout in train mode needs an rng")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._cache = mask
        return x * mask

    def backward(self, grad):
        return grad if self._cache is None else grad * self._cache

    def config(self):
        return {"rate": self.rate}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        self._store(train, x > 0)
        return np.maximum(x, 0.0)

    def backward(self, grad):
        return grad * self._need_cache()


class Softmax(Layer):
    """Softmax over the last axis."""

    kind = "softmax"

    def forward(self, x, train=False, rng=None):
        p = softmax(x, axis=-1)
        self._store(train, p)
        return p

    def backward(self, grad):
        p = self._need_cache()
        return p * (grad - np.sum(grad * p, axis=-1, keepdims=True))


class BiGRU(Layer):
    """Bidirectional gated recurrent unit, outputs concatenated per step.

    Per direction, with gates packed as ``[update | reset | candidate]``::

        z = sigmoid(x Wz + h Uz + bz)
        r = sigmoid(x Wr + h Ur + br)
        n = tanh(x Wn + (r * h) Un + bn)
        h' = z * h + (1 - z) * n

    Input ``[B, T, D]``, output ``[B, T, 2H]``: the first ``H`` features come
    from the forward pass, the last ``H`` from the backward pass (aligned to
    the same time index).
    """

    kind = "bigru"

    def __init__(self, in_features: int, units: int, rng=None):
        super().__init__()
        self.in_features, self.units = int(in_features), int(units)
        rng = rng or np.random.default_rng(0)
        d, h = self.in_features, self.units
        self.params = {}
        for tag in ("f", "b"):
            self.params[f"W_{tag}"] = glorot_uniform(rng, (d, 3 * h), d, 3 * h)
            self.params[f"U_{tag}"] = glorot_uniform(rng, (h, 3 * h), h, 3 * h)
            self.params[f"b_{tag}"] = np.zeros(3 * h)

    def output_shape(self, in_shape):
        return (in_shape[0], 2 * self.units)

    def _run(self, x, tag):
        W, U, bias = self.params[f"W_{tag}"], self.params[f"U_{tag}"], self.params[f"b_{tag}"]
        H = self.units
        B, T, _ = x.shape
        xw = x @ W + bias
        hs = np.zeros((B, T + 1, H))
        zs = np.empty((B, T, H))
        rs = np.empty((B, T, H))
        ns = np.empty((B, T, H))
        Uzr, Un = U[:, : 2 * H], U[:, 2 * H :]
        for t in range(T):
            h = hs[:, t]
            a = xw[:, t, : 2 * H] + h @ Uzr
            zr = sigmoid(a)
            z, r = zr[:, :H], zr[:, H:]
            n = np.tanh(xw[:, t, 2 * H :] + (r * h) @ Un)
            hs[:, t + 1] = z * h + (1.0 - z) * n
            zs[:, t], rs[:, t], ns[:, t] = z, r, n
        return hs, zs, rs, ns

    def _back(self, x, grad_h, cache, tag):
        hs, zs, rs, ns = cache
        W, U = self.params[f"W_{tag}"], self.params[f"U_{tag}"]
        H = self.units
        B, T, _ = x.shape
        Uzr, Un = U[:, : 2 * H], U[:, 2 * H :]
        dxw = np.empty((B, T, 3 * H))
        dU = np.zeros_like(U)
        dh = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dh = dh + grad_h[:, t]
            h_prev, z, r, n = hs[:, t], zs[:, t], rs[:, t], ns[:, t]
            dz = dh * (h_prev - n)
            da_n = dh * (1.0 - z) * (1.0 - n * n)
            rh = r * h_prev
            dU[:, 2 * H :] += rh.T @ da_n
            drh = da_n @ Un.T
            da_z = dz * z * (1.0 - z)
            da_r = drh * h_prev * r * (1.0 - r)
            da_zr = np.concatenate([da_z, da_r], axis=1)
            dU[:, : 2 * H] += h_prev.T @ da_zr
            dh = dh * z + drh * r + da_zr @ Uzr.T
            dxw[:, t, : 2 * H] = da_zr
            dxw[:, t, 2 * H :] = da_n
        flat = dxw.reshape(-1, 3 * H)
        self.grads[f"W_{tag}"] = x.reshape(-1, self.in_features).T @ flat
        self.grads[f"U_{tag}"] = dU
        self.grads[f"b_{tag}"] = flat.sum(axis=0)
        return dxw @ W.T

    def forward(self, x, train=False, rng=None):
        if x.ndim != 3 or x.shape[2] != self.in_features:
            raise DataError(f"{self.kind}: expected [B, T, {self.in_features}], got {x.shape}")
        fwd = self._run(x, "f")
        xr = x[:, ::-1]
        bwd = self._run(xr, "b")
        out = np.concatenate([fwd[0][:, 1:], bwd[0][:, 1:][:, ::-1]], axis=2)
        self._store(train, (x, fwd, bwd))
        return out

    def backward(self, grad):
        x, fwd, bwd = self._need_cache()
        H = self.units
        self.grads = {}
        gx = self._back(x, grad[:, :, :H], fwd, "f")
        gxr = self._back(x[:, ::-1], grad[:, ::-1, H:], bwd, "b")
        return gx + gxr[:, ::-1]

    def config(self):
        return {"in_features": self.in_features, "units": self.units}


class AttentionPool(Layer):
    """Softmax attention over time followed by a weighted sum.

    Scores are ``e_i = tanh(w . zeta_i + b)``; ``alpha = softmax(e)`` over the
    time axis and the output is ``c = sum_i alpha_i zeta_i``.
    """

    kind = "attention_pool"

    def __init__(self, in_features: int, rng=None):
        super().__init__()
        self.in_features = int(in_features)
        rng = rng or np.random.default_rng(0)
        self.params = {
            "w": glorot_uniform(rng, (self.in_features,), self.in_features, 1),
            "b": np.zeros(1),
        }

    def output_shape(self, in_shape):
        return (in_shape[1],)

    def weights(self, Z: np.ndarray) -> np.ndarray:
        """Attention weights ``[B, T]`` for input ``[B, T, D]`` (no caching)."""
        e = np.tanh(Z @ self.params["w"] + self.params["b"][0])
        return softmax(e, axis=-1)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 3 or x.shape[2] != self.in_features or x.shape[1] < 1:
            raise DataError(f"{self.kind}: expected [B, T>=1, {self.in_features}], got {x.shape}")
        e = np.tanh(x @ self.params["w"] + self.params["b"][0])
        alpha = softmax(e, axis=-1)
        self._store(train, (x, e, alpha))
        return np.einsum("bt,btd->bd", alpha, x)

    def backward(self, grad):
        x, e, alpha = self._need_cache()
        dalpha = np.einsum("bd,btd->bt", grad, x)
        de = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
        da = de * (1.0 - e * e)
        self.grads = {"w": np.einsum("bt,btd->d", da, x), "b": np.array([da.sum()])}
        return alpha[:, :, None] * grad[:, None, :] + da[:, :, None] * self.params["w"]

    def config(self):
        return {"in_features": self.in_features}


class LastStep(Layer):
    """Final state of each direction of a bidirectional sequence ``[B, T, 2H]``:
    the forward half at ``t = T-1`` and the backward half at ``t = 0``."""

    kind = "last_step"

    def __init__(self, units: int):
        super().__init__()
        self.units = int(units)

    def output_shape(self, in_shape):
        return (in_shape[1],)

    def forward(self, x, train=False, rng=None):
        H = self.units
        self._store(train, x.shape)
        return np.concatenate([x[:, -1, :H], x[:, 0, H:]], axis=1)

    def backward(self, grad):
        shape = self._need_cache()
        H = self.units
        gx = np.zeros(shape)
        gx[:, -1, :H] = grad[:, :H]
        gx[:, 0, H:] += grad[:, H:]
        return gx

    def config(self):
        return {"units": self.units}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False, rng=None):
        self._store(train, x.shape)
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._need_cache())


class ToSequence(Layer):
    """``[B, T, F, C]`` feature maps to a ``[B, T, F * C]`` sequence over time."""

    kind = "to_sequence"

    def output_shape(self, in_shape):
        t, f, c = in_shape
        return (t, f * c)

    def forward(self, x, train=False, rng=None):
        self._store(train, x.shape)
        return x.reshape(x.shape[0], x.shape[1], -1)

    def backward(self, grad):
        return grad.reshape(self._need_cache())


class AddChannel(Layer):
    """``[B, T, F]`` to single-channel ``[B, T, F, 1]``."""

    kind = "add_channel"

    def output_shape(self, in_shape):
        return tuple(in_shape) + (1,)

    def forward(self, x, train=False, rng=None):
        self._store(train, True)
        return x[..., None]

    def backward(self, grad):
        self._need_cache()
        return grad[..., 0]


class Normalize(Layer):
    """Fixed affine input scaling ``(x - mean) / std``; not trained.

    ``mean`` and ``std`` are set once from training data (see
    :meth:`roomclass.models.Model.fit_normalization`) and travel with the
    checkpoint.
    """

    kind = "normalize"

    def __init__(self, mean: float = 0.0, std: float = 1.0):
        super().__init__()
        self.mean, self.std = float(mean), float(std)

    def forward(self, x, train=False, rng=None):
        self._store(train, True)
        return (x - self.mean) / self.std

    def backward(self, grad):
        self._need_cache()
        return grad / self.std

    def config(self):
        return {"mean": self.mean, "std": self.std}


LAYER_TYPES = {
    cls.kind: cls
    for cls in (
        Dense,
        TimeDistributedDense,
        Conv2D,
        MaxPool2D,
        Dropout,
        ReLU,
        Softmax,
        BiGRU,
        AttentionPool,
        LastStep,
        Flatten,
        ToSequence,
        AddChannel,
        Normalize,
    )
}


def layer_from_config(kind: str, config: dict) -> Layer:
    if kind not in LAYER_TYPES:
        raise DataError(f"unknown layer kind {kind!r}")
    return LAYER_TYPES[kind](**config)
