"""Parameterized layers: convolution, linear, and batch normalization.

Each layer owns its parameter tensors, exposes them through
``named_params()`` (trainable) and ``named_buffers()`` (running statistics),
and is a pure function of (input, params) during a forward pass.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor


def he_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    """He-style fan-in scaled normal initialization."""
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True)


def linear_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    return Tensor(rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, fan_out)), requires_grad=True)


class Conv2d:
    """3x3/1x1/7x7 convolution layer with bias."""

    def __init__(self, rng, in_ch: int, out_ch: int, kernel: int, stride: int = 1, pad: int = 0):
        self.stride = stride
        self.pad = pad
        self.kernel = he_init(rng, (out_ch, in_ch, kernel, kernel), fan_in=in_ch * kernel * kernel)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.kernel, self.bias, stride=self.stride, pad=self.pad)

    def named_params(self, prefix: str) -> dict:
        return {f"{prefix}.kernel": self.kernel, f"{prefix}.bias": self.bias}


class Linear:
    """Dense layer: x @ weight + bias."""

    def __init__(self, rng, in_features: int, out_features: int, std: float | None = None):
        if std is None:
            self.weight = linear_init(rng, in_features, out_features)
        else:
            self.weight = Tensor(rng.normal(0.0, std, size=(in_features, out_features)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)

    def named_params(self, prefix: str) -> dict:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


class LayerNorm:
    """Last-axis layer normalization with learned affine parameters."""

    def __init__(self, dim: int, eps: float = 1e-5):
        self.eps = eps
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)

    def named_params(self, prefix: str) -> dict:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}


class BatchNorm2d:
    """Per-channel batch statistics while training, running stats at inference."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        c = self.channels
        if training:
            mu = T.mean(x, axis=(0, 2, 3), keepdims=True)
            var = T.mean(T.power(T.sub(x, mu), 2.0), axis=(0, 2, 3), keepdims=True)
            # running stats track the batch statistics outside the tape
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu.data.reshape(c)
            self.running_var = (1 - m) * self.running_var + m * var.data.reshape(c)
        else:
            mu = Tensor(self.running_mean.reshape(1, c, 1, 1))
            var = Tensor(self.running_var.reshape(1, c, 1, 1))
        xhat = T.mul(T.sub(x, mu), T.power(T.add(var, self.eps), -0.5))
        return T.add(
            T.mul(xhat, self.gamma.reshape((1, c, 1, 1))),
            self.beta.reshape((1, c, 1, 1)),
        )

    def named_params(self, prefix: str) -> dict:
        return {f"{prefix}.gamma": self.gamma, f"{prefix}.beta": self.beta}

    def named_buffers(self, prefix: str) -> dict:
        return {f"{prefix}.running_mean": self.running_mean, f"{prefix}.running_var": self.running_var}

    def set_buffer(self, name: str, values: np.ndarray):
        if name.endswith("running_mean"):
            self.running_mean = values.copy()
        elif name.endswith("running_var"):
            self.running_var = values.copy()
        else:
            raise ConfigError(f"unknown batch-norm buffer {name!r}")
