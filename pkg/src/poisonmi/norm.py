"""Batch normalization and the statistics-routed dual normalization layer.

Conventions: biased variance (divide by N) for batch and running
statistics, ``eps = 1e-5``, running-stat momentum ``0.1`` with running
mean/var initialised to 0/1.  The affine step is ``gamma * xhat + beta``; a
sign flip on ``beta`` would be equivalent because ``beta`` is learned.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, EmptyInputError, StateError
from .nn import Parameter

EPS = 1e-5
MOMENTUM = 0.1
LABEL_POLICIES = ("same-label", "random-label")


@dataclass(frozen=True)
class EncodingSpec:
    """Adversary-chosen statistics of the membership-encoding samples."""

    mean: float = 0.0
    stdev: float = 0.1
    tolerance: float = 0.1
    label_policy: str = "same-label"

    def __post_init__(self):
        if not self.stdev > 0:
            raise ConfigError("encoding stdev must be > 0")
        if not self.tolerance > 0:
            raise ConfigError("routing tolerance must be > 0")
        if self.label_policy not in LABEL_POLICIES:
            raise ConfigError(f"unknown label policy {self.label_policy!r}")

    def to_dict(self):
        return {
            "mean": self.mean,
            "stdev": self.stdev,
            "tolerance": self.tolerance,
            "label_policy": self.label_policy,
        }


def route_mask(x, spec: EncodingSpec) -> np.ndarray:
    """True for rows whose own mean and biased stdev sit within tolerance of the encoding statistics."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ConfigError("route_mask needs rows with at least 2 features")
    mean, std = kernels.row_stats(x)
    return (np.abs(mean - spec.mean) <= spec.tolerance) & (np.abs(std - spec.stdev) <= spec.tolerance)


class NormLayer:
    kind = "norm"

    def __init__(self, d, momentum=MOMENTUM, eps=EPS):
        self.d = d
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(d), "gamma")
        self.beta = Parameter(np.zeros(d), "beta")
        self.running_mean = np.zeros(d)
        self.running_var = np.ones(d)
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward_train(self, x):
        if x.shape[0] == 0:
            raise EmptyInputError("batch norm needs at least one sample")
        mu = x.mean(axis=0)
        var = ((x - mu) ** 2).mean(axis=0)
        std = np.sqrt(var + self.eps)
        xhat = (x - mu) / std
        m = self.momentum
        self.running_mean = (1 - m) * self.running_mean + m * mu
        self.running_var = (1 - m) * self.running_var + m * var
        self._cache = (xhat, std, True)
        return self.gamma.value * xhat + self.beta.value

    def forward_eval(self, x):
        std = np.sqrt(self.running_var + self.eps)
        xhat = (x - self.running_mean) / std
        self._cache = (xhat, std, False)
        return self.gamma.value * xhat + self.beta.value

    def forward(self, x, training, route=None):
        return self.forward_train(x) if training else self.forward_eval(x)

    def backward(self, grad, input_grad=True):
        """Exact gradient of the last forward; ``grad`` may carry a leading per-example axis.

        In train mode the batch mean and variance depend on every row, so the
        input gradient couples rows; in eval mode it is a per-channel scale.
        """
        if self._cache is None:
            raise StateError("bn backward called before a forward pass")
        xhat, std, batch_stats = self._cache
        gx = np.einsum("...nd,nd->...d", grad, xhat)
        gs = grad.sum(axis=-2)
        self.gamma.grad = gx
        self.beta.grad = gs
        if not input_grad:
            return None
        scale = self.gamma.value / std
        if not batch_stats:
            return grad * scale
        # (g - mean(g) - xhat * mean(g * xhat)) / std with g = grad * gamma
        n = xhat.shape[0]
        out = grad - (gs / n)[..., None, :]
        out -= xhat * (gx / n)[..., None, :]
        out *= scale
        return out


def _as_slice(idx):
    # contiguous index runs become slices so stacked gradients are views, not copies
    if idx.size and idx[-1] - idx[0] + 1 == idx.size:
        return slice(int(idx[0]), int(idx[-1]) + 1)
    return idx


def _empty(idx):
    return idx.start == idx.stop if isinstance(idx, slice) else idx.size == 0


class DualNormLayer:
    """Primary/secondary batch norm with per-sample routing.

    The routing decision is made once on the raw model input and handed to
    every dual layer as a boolean ``route`` (True means secondary).
    """

    kind = "dual"

    def __init__(self, d, spec: EncodingSpec, momentum=MOMENTUM, eps=EPS):
        self.d = d
        self.spec = spec
        self.primary = NormLayer(d, momentum, eps)
        self.secondary = NormLayer(d, momentum, eps)
        self._split = None

    def params(self):
        return self.primary.params() + self.secondary.params()

    def buffers(self):
        return {
            "primary_running_mean": self.primary.running_mean,
            "primary_running_var": self.primary.running_var,
            "secondary_running_mean": self.secondary.running_mean,
            "secondary_running_var": self.secondary.running_var,
        }

    def forward(self, x, training, route=None):
        if route is None:
            raise StateError("dual norm layer needs a routing mask")
        route = np.asarray(route, dtype=bool)
        sec = _as_slice(np.flatnonzero(route))
        pri = _as_slice(np.flatnonzero(~route))
        out = np.empty_like(x)
        used = []
        for idx, layer in ((pri, self.primary), (sec, self.secondary)):
            if _empty(idx):
                continue
            out[idx] = layer.forward(x[idx], training)
            used.append((idx, layer))
        self._split = used
        return out

    def backward(self, grad, input_grad=True):
        if self._split is None:
            raise StateError("dual bn backward called before a forward pass")
        gx = np.zeros_like(grad) if input_grad else None
        # a sub-layer that saw no samples this step keeps grad None and is
        # skipped by the optimizer (no weight decay either)
        for p in self.params():
            p.grad = None
        for idx, layer in self._split:
            sub = layer.backward(grad[..., idx, :], input_grad)
            if input_grad:
                gx[..., idx, :] = sub
        return gx
