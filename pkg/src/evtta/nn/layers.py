"""Layers with explicit forward/backward passes over NHWC float64 arrays.

Each layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``Parameter.grad`` in ``backward``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN, OTHER = "bn", "other"


class Parameter:
    __slots__ = ("value", "grad", "tag")

    def __init__(self, value: np.ndarray, tag: str = OTHER):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.tag = tag

    def __repr__(self):
        return f"Parameter(shape={self.value.shape}, tag={self.tag!r})"


class Layer:
    kind = "layer"
    needs_input_grad = True

    def params(self) -> dict[str, Parameter]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def spec(self) -> dict:
        return {"type": self.kind}

    def forward(self, x, train: bool, update_stats: bool = True):
        raise NotImplementedError

    def backward(self, gy):
        raise NotImplementedError

    def clear_cache(self):
        self._cache = None


class Conv2d(Layer):
    """Square-kernel convolution with 'same' zero padding."""

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel=3, stride=1, rng=None):
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride = kernel, stride
        self.pad = kernel // 2
        rng = rng or np.random.default_rng(0)
        fan_in = in_channels * kernel * kernel
        self.weight = Parameter(rng.normal(0, np.sqrt(2.0 / fan_in), (kernel, kernel, in_channels, out_channels)))
        self.bias = Parameter(np.zeros(out_channels))
        self._cache = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def spec(self):
        return {"type": self.kind, "in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel": self.kernel, "stride": self.stride}

    def forward(self, x, train, update_stats=True):
        k, s, p = self.kernel, self.stride, self.pad
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]  # (N, Ho, Wo, C, k, k)
        N, Ho, Wo = win.shape[:3]
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(N * Ho * Wo, -1)  # rows ordered (ky, kx, c)
        out = cols @ self.weight.value.reshape(-1, self.out_channels) + self.bias.value
        self._cache = (cols, x.shape, (N, Ho, Wo))
        return out.reshape(N, Ho, Wo, self.out_channels)

    def backward(self, gy):
        cols, xshape, (N, Ho, Wo) = self._cache
        k, s, p = self.kernel, self.stride, self.pad
        g2 = gy.reshape(-1, self.out_channels)
        self.weight.grad += (cols.T @ g2).reshape(self.weight.value.shape)
        self.bias.grad += g2.sum(axis=0)
        if not self.needs_input_grad:
            return None
        dcols = (g2 @ self.weight.value.reshape(-1, self.out_channels).T).reshape(N, Ho, Wo, k, k, self.in_channels)
        _, H, W, C = xshape
        dxp = np.zeros((N, H + 2 * p, W + 2 * p, C))
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + s * Ho:s, j:j + s * Wo:s, :] += dcols[:, :, :, i, j, :]
        return dxp[:, p:p + H, p:p + W, :]


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features, rng=None):
        self.in_features, self.out_features = in_features, out_features
        rng = rng or np.random.default_rng(0)
        self.weight = Parameter(rng.normal(0, np.sqrt(1.0 / in_features), (in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features))
        self._cache = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def spec(self):
        return {"type": self.kind, "in_features": self.in_features, "out_features": self.out_features}

    def forward(self, x, train, update_stats=True):
        self._cache = x
        return x @ self.weight.value + self.bias.value

    def backward(self, gy):
        x = self._cache
        self.weight.grad += x.T @ gy
        self.bias.grad += gy.sum(axis=0)
        return gy @ self.weight.value.T


class BatchNorm(Layer):
    """Batch normalization over every axis but the last (channels).

    Train mode normalizes with biased batch statistics and, when
    ``update_stats`` is set, folds them into the running estimates
    (unbiased variance, exponential ``momentum``). Eval mode uses the
    running estimates.
    """

    kind = "batchnorm"

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.gamma = Parameter(np.ones(channels), BN)
        self.beta = Parameter(np.zeros(channels), BN)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self._cache = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def spec(self):
        return {"type": self.kind, "channels": self.channels, "eps": self.eps, "momentum": self.momentum}

    def forward(self, x, train, update_stats=True):
        flat = x.reshape(-1, self.channels)
        m = flat.shape[0]
        if train:
            mean = flat.mean(axis=0)
            centered = flat - mean
            var = np.einsum("ij,ij->j", centered, centered) / m
            if update_stats:
                unbiased = var * m / (m - 1) if m > 1 else var
                self.running_mean[:] = (1 - self.momentum) * self.running_mean + self.momentum * mean
                self.running_var[:] = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            centered = flat - self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = centered * inv_std
        self._cache = (xhat, inv_std, train)
        return (xhat * self.gamma.value + self.beta.value).reshape(x.shape)

    def backward(self, gy):
        xhat, inv_std, train = self._cache
        g = gy.reshape(-1, self.channels)
        sum_g = g.sum(axis=0)
        sum_gx = np.einsum("ij,ij->j", g, xhat)
        self.gamma.grad += sum_gx
        self.beta.grad += sum_g
        scale = self.gamma.value * inv_std
        if not train:
            return (g * scale).reshape(gy.shape)
        m = g.shape[0]
        return ((g - sum_g / m - xhat * (sum_gx / m)) * scale).reshape(gy.shape)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train, update_stats=True):
        self._cache = x > 0
        return np.maximum(x, 0.0)

    def backward(self, gy):
        return gy * self._cache


class MaxPool(Layer):
    """2x2 max pooling, stride 2; gradient goes to the first maximal entry."""

    kind = "maxpool"
    _OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))

    def forward(self, x, train, update_stats=True):
        N, H, W, C = x.shape
        if H % 2 or W % 2:
            raise ValueError(f"MaxPool needs even spatial dims, got {(H, W)}")
        out = x.reshape(N, H // 2, 2, W // 2, 2, C).max(axis=(2, 4))
        self._cache = (x, out)
        return out

    def backward(self, gy):
        x, out = self._cache
        gx = np.zeros_like(x)
        taken = np.zeros(out.shape, dtype=bool)
        for i, j in self._OFFSETS:
            hit = (x[:, i::2, j::2] == out) & ~taken
            gx[:, i::2, j::2] = gy * hit
            taken |= hit
        return gx


class GlobalAvgPool(Layer):
    kind = "gap"

    def forward(self, x, train, update_stats=True):
        self._cache = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, gy):
        N, H, W, C = self._cache
        return np.broadcast_to(gy[:, None, None, :] / (H * W), (N, H, W, C)).copy()


class SoftmaxHead(Layer):
    """Turns C logits into class probabilities."""

    kind = "softmax"

    def __init__(self, num_classes):
        self.num_classes = num_classes
        self._cache = None

    def spec(self):
        return {"type": self.kind, "num_classes": self.num_classes}

    def forward(self, x, train, update_stats=True):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        self._cache = p
        return p

    def backward(self, gy):
        p = self._cache
        return p * (gy - (gy * p).sum(axis=1, keepdims=True))


class GaussianHead(Layer):
    """Maps two raw outputs to ``(mu, sigma)`` with ``sigma = exp(raw / 2)``."""

    kind = "gaussian"

    def forward(self, x, train, update_stats=True):
        mu = x[:, 0]
        sigma = np.exp(x[:, 1] / 2.0)
        self._cache = sigma
        return np.stack([mu, sigma], axis=1)

    def backward(self, gy):
        sigma = self._cache
        return np.stack([gy[:, 0], gy[:, 1] * sigma / 2.0], axis=1)


LAYER_TYPES = {cls.kind: cls for cls in (Conv2d, Dense, BatchNorm, ReLU, MaxPool, GlobalAvgPool, SoftmaxHead, GaussianHead)}


def layer_from_spec(spec: dict) -> Layer:
    spec = dict(spec)
    cls = LAYER_TYPES[spec.pop("type")]
    return cls(**spec)
