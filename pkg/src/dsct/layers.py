"""Parameter-holding building blocks.

A :class:`Module` is a plain object whose Tensor attributes are trainable
parameters and whose ndarray attributes are non-trainable state (running
statistics).  Walking happens in attribute insertion order, so parameter
names and checkpoint layouts are stable across runs as long as construction
order is stable.
"""

from __future__ import annotations

import math

import numpy as np

from . import functional as F
from .errors import ConfigError
from .tensor import Tensor, relu


class Module:
    def named_parameters(self, prefix: str = ""):
        """Yield ``(dotted_name, tensor)`` for every trainable parameter."""
        for key, value in vars(self).items():
            yield from _walk(value, f"{prefix}{key}", _is_param)

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        """Yield ``(dotted_name, ndarray)`` for non-trainable state."""
        for key, value in vars(self).items():
            yield from _walk(value, f"{prefix}{key}", _is_buffer)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def to_dtype(self, dtype):
        """Cast every parameter and buffer in place (grads are dropped)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for name, _ in list(self.named_buffers()):
            _assign_by_path(self, name, _fetch_by_path(self, name).astype(dtype))
        return self


def _is_param(v):
    return isinstance(v, Tensor) and v.requires_grad


def _is_buffer(v):
    return isinstance(v, np.ndarray)


def _walk(value, name, pred):
    if pred(value):
        yield name, value
    elif isinstance(value, Module):
        yield from (
            value.named_parameters(name + ".")
            if pred is _is_param
            else value.named_buffers(name + ".")
        )
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}", pred)


def _fetch_by_path(module, path):
    obj = module
    for part in path.split("."):
        obj = obj[int(part)] if isinstance(obj, (list, tuple)) else getattr(obj, part)
    return obj


def _assign_by_path(module, path, value):
    parts = path.split(".")
    obj = module
    for part in parts[:-1]:
        obj = obj[int(part)] if isinstance(obj, (list, tuple)) else getattr(obj, part)
    last = parts[-1]
    if isinstance(obj, list):
        obj[int(last)] = value
    else:
        setattr(obj, last, value)


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator,
                 dtype=np.float32, bias: bool = True):
        self.w = _uniform(rng, (din, dout), din, dtype)
        self.b = _uniform(rng, (dout,), din, dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.w, self.b)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, pad_mode: str = "zero",
                 bias: bool = True, dtype=np.float32):
        fan_in = cin * k * k
        self.w = _uniform(rng, (cout, cin, k, k), fan_in, dtype)
        self.b = _uniform(rng, (cout,), fan_in, dtype) if bias else None
        self.stride = stride
        self.padding = padding
        self.pad_mode = pad_mode

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.w, self.b, stride=self.stride,
                        padding=self.padding, pad_mode=self.pad_mode)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        self.gamma = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, axes=(-1,), eps=self.eps)


class BatchNorm2d(Module):
    """Per-channel normalisation with running statistics.

    Construct with ``init_stats=True`` to start from (mean 0, var 1); the
    default leaves the statistics unset, in which case an eval-mode call
    before any training step raises a state error.
    """

    def __init__(self, c: int, momentum: float = 0.1, eps: float = 1e-5,
                 init_stats: bool = False, dtype=np.float32):
        self.gamma = Tensor(np.ones(c, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.momentum = momentum
        self.eps = eps
        if init_stats:
            self.running_mean = np.zeros(c, dtype=dtype)
            self.running_var = np.ones(c, dtype=dtype)
        else:
            self.running_mean = None
            self.running_var = None

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        out, mean, var = F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=training, momentum=self.momentum, eps=self.eps,
        )
        if training:
            self.running_mean = mean
            self.running_var = var
        return out


class Mlp(Module):
    """Token-wise two-layer perceptron with a ReLU in between."""

    def __init__(self, dim: int, ratio: int, rng: np.random.Generator,
                 dtype=np.float32):
        if ratio < 1:
            raise ConfigError(f"mlp ratio must be >= 1, got {ratio}")
        self.fc1 = Linear(dim, dim * ratio, rng, dtype=dtype)
        self.fc2 = Linear(dim * ratio, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(x)))
