"""Layers with hand-written forward and backward passes.

Every layer keeps what its backward pass needs from the last forward call,
so one forward must precede each backward. Parameters and their gradients
live in ``params`` / ``grads`` dicts keyed by the same names.
"""

from __future__ import annotations

import numpy as np


class Layer:
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x, train: bool = False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def buffers(self) -> dict:
        """Non-trainable state saved with the parameters."""
        return {}

    def astype(self, dtype):
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        self.grads = {}
        return self


class Conv1d(Layer):
    """'Same'-padded 1-D convolution along the last axis: (B, Cin, L) -> (B, Cout, L)."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        fan_in = c_in * kernel
        self.kernel = kernel
        self.params["w"] = (rng.standard_normal((c_out, c_in, kernel)) * np.sqrt(2.0 / fan_in)).astype(dtype)
        self.params["b"] = np.zeros(c_out, dtype=dtype)

    def forward(self, x, train=False):
        w = self.params["w"]
        c_out, c_in, k = w.shape
        b, c, n = x.shape
        if c != c_in:
            raise ValueError(f"conv expects {c_in} input channels, got {c}")
        pad = k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
        cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # (B, Cin, L, K)
        cols = cols.transpose(0, 2, 1, 3).reshape(b, n, c_in * k)
        self._cache = (cols, x.shape)
        out = cols @ w.reshape(c_out, -1).T + self.params["b"]
        return out.transpose(0, 2, 1)

    def backward(self, dout):
        cols, (b, c_in, n) = self._cache
        w = self.params["w"]
        c_out, _, k = w.shape
        d = dout.transpose(0, 2, 1)  # (B, L, Cout)
        self.grads["w"] = (d.reshape(-1, c_out).T @ cols.reshape(-1, c_in * k)).reshape(w.shape)
        self.grads["b"] = dout.sum(axis=(0, 2))
        dcols = (d @ w.reshape(c_out, -1)).reshape(b, n, c_in, k)
        pad = k // 2
        dxp = np.zeros((b, c_in, n + 2 * pad), dtype=dout.dtype)
        for j in range(k):
            dxp[:, :, j:j + n] += dcols[:, :, :, j].transpose(0, 2, 1)
        return dxp[:, :, pad:pad + n]


class BatchNorm1d(Layer):
    """Per-channel normalisation over batch and length: (B, C, L)."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, train=False):
        g = self.params["gamma"][None, :, None]
        beta = self.params["beta"][None, :, None]
        if train:
            mu = x.mean(axis=(0, 2), keepdims=True)
            xc = x - mu
            var = (xc * xc).mean(axis=(0, 2), keepdims=True)
            inv = 1.0 / np.sqrt(var + self.eps)
            xhat = xc * inv
            self._cache = (xhat, inv, True)
            m = x.shape[0] * x.shape[2]
            unbiased = var.ravel() * (m / max(m - 1, 1))
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mu.ravel()
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            mu = self.running_mean.astype(x.dtype)[None, :, None]
            inv = (1.0 / np.sqrt(self.running_var + self.eps)).astype(x.dtype)[None, :, None]
            xhat = (x - mu) * inv
            self._cache = (xhat, inv, False)
        return g * xhat + beta

    def backward(self, dout):
        xhat, inv, batch_stats = self._cache
        g = self.params["gamma"][None, :, None]
        self.grads["gamma"] = (dout * xhat).sum(axis=(0, 2))
        self.grads["beta"] = dout.sum(axis=(0, 2))
        dxhat = dout * g
        if not batch_stats:
            return dxhat * inv
        return inv * (dxhat - dxhat.mean(axis=(0, 2), keepdims=True)
                      - xhat * (dxhat * xhat).mean(axis=(0, 2), keepdims=True))


class ReLU(Layer):
    def forward(self, x, train=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class MaxPool1d(Layer):
    """Non-overlapping max pooling along the last axis; trailing remainder dropped."""

    def __init__(self, size: int):
        super().__init__()
        self.size = size

    def forward(self, x, train=False):
        b, c, n = x.shape
        k = self.size
        m = n // k
        xr = x[:, :, : m * k].reshape(b, c, m, k)
        idx = xr.argmax(axis=3)
        self._cache = (idx, x.shape)
        return np.take_along_axis(xr, idx[..., None], axis=3)[..., 0]

    def backward(self, dout):
        idx, (b, c, n) = self._cache
        k = self.size
        m = n // k
        dx = np.zeros((b, c, m, k), dtype=dout.dtype)
        np.put_along_axis(dx, idx[..., None], dout[..., None], axis=3)
        out = np.zeros((b, c, n), dtype=dout.dtype)
        out[:, :, : m * k] = dx.reshape(b, c, m * k)
        return out


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, gain: float = 2.0,
                 dtype=np.float32):
        super().__init__()
        self.params["w"] = (rng.standard_normal((n_in, n_out)) * np.sqrt(gain / n_in)).astype(dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)

    def forward(self, x, train=False):
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dout):
        self.grads["w"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["w"].T


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        super().__init__()
        self.layers = layers

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout
