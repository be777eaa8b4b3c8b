"""Dense-network primitives with hand-written backward passes.

Every ``backward`` accepts either an ``(N, d)`` gradient or a stacked
``(B, N, d)`` gradient holding B independent upstream gradients (used for
per-example gradients).  In the stacked case each parameter's ``grad`` gets
the same leading axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, EmptyInputError


class Parameter:
    __slots__ = ("value", "grad", "velocity", "name")

    def __init__(self, value, name=""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.velocity = np.zeros_like(self.value)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.value.shape})"


class DenseLayer:
    kind = "dense"

    def __init__(self, d_in, d_out, rng=None):
        self.d_in = d_in
        self.d_out = d_out
        if rng is None:
            w = np.zeros((d_out, d_in))
        else:
            limit = np.sqrt(6.0 / (d_in + d_out))
            w = rng.uniform(-limit, limit, size=(d_out, d_in))
        self.weight = Parameter(w, "weight")
        self.bias = Parameter(np.zeros(d_out), "bias")
        self._x = None

    def params(self):
        return [self.weight, self.bias]

    def buffers(self):
        return {}

    def forward(self, x, training=False, route=None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise DimensionError(f"dense layer expects (N, {self.d_in}) input, got {x.shape}")
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, grad, input_grad=True):
        self.weight.grad = np.swapaxes(grad, -1, -2) @ self._x
        self.bias.grad = grad.sum(axis=-2)
        if not input_grad:
            return None
        return grad @ self.weight.value


class ReLU:
    kind = "relu"

    def __init__(self):
        self._mask = None

    def params(self):
        return []

    def buffers(self):
        return {}

    def forward(self, x, training=False, route=None):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad, input_grad=True):
        return grad * self._mask


class Dropout:
    """Inverted dropout; identity in eval mode."""

    kind = "dropout"

    def __init__(self, rate, rng=None):
        if not 0 <= rate < 1:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._scale = None

    def params(self):
        return []

    def buffers(self):
        return {}

    def forward(self, x, training=False, route=None):
        if not training or self.rate == 0:
            self._scale = None
            return x
        keep = self.rng.random(x.shape) >= self.rate
        self._scale = keep / (1.0 - self.rate)
        return x * self._scale

    def backward(self, grad, input_grad=True):
        return grad if self._scale is None else grad * self._scale


def dropout_forward(x, rate, training, rng):
    return Dropout(rate, rng).forward(x, training)


def dense_forward(layer: DenseLayer, x):
    return layer.forward(x)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(np.asarray(logits, dtype=np.float64)))


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient ``(softmax - onehot) / N``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    if n == 0:
        raise EmptyInputError("cross-entropy of an empty batch")
    c = logits.shape[1]
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= c:
        raise DimensionError("labels must be class indices in [0, C), one per row")
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


def per_sample_cross_entropy(logits, labels):
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    return -logp[np.arange(len(labels)), np.asarray(labels)]


@dataclass
class SgdConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: list = field(default_factory=lambda: [(60, 5.0), (120, 5.0), (160, 5.0)])

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be >= 0")
        self.schedule = [(int(e), float(div)) for e, div in self.schedule]
        epochs = [e for e, _ in self.schedule]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ConfigError("schedule epochs must be strictly increasing")
        if any(div <= 1 for _, div in self.schedule):
            raise ConfigError("schedule divisors must be > 1")

    def to_dict(self):
        return {
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "schedule": [list(s) for s in self.schedule],
        }


def effective_lr(config: SgdConfig, epoch: int) -> float:
    div = 1.0
    for e, d in config.schedule:
        if e <= epoch:
            div *= d
    return config.learning_rate / div


def sgd_step(params, config: SgdConfig, epoch: int):
    """Momentum SGD with L2 weight decay; parameters with ``grad is None`` are skipped."""
    lr = effective_lr(config, epoch)
    for p in params:
        if p.grad is None:
            continue
        if p.grad.shape != p.value.shape:
            raise DimensionError(f"grad shape {p.grad.shape} != param shape {p.value.shape}")
        g = p.grad + config.weight_decay * p.value if config.weight_decay else p.grad
        if config.momentum:
            p.velocity = config.momentum * p.velocity + g
            p.value = p.value - lr * p.velocity
        else:
            p.velocity = g
            p.value = p.value - lr * g
