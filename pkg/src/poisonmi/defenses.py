"""Training-time and output-side defenses: DP-SGD, MMD regularisation,
soft-label training and rank-preserving output obfuscation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, FormatError
from .nn import SgdConfig, log_softmax, sgd_step

DEFENSES = ("none", "dpsgd", "mmd", "softlabel")


@dataclass
class DpsgdConfig:
    clip_norm: float = 1.0
    noise_multiplier: float = 0.0

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ConfigError("clip norm must be > 0")
        if self.noise_multiplier < 0:
            raise ConfigError("noise multiplier must be >= 0")


@dataclass
class MmdConfig:
    lam: float = 1.0
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("MMD weight must be >= 0")
        if not self.bandwidth > 0:
            raise ConfigError("MMD bandwidth must be > 0")


@dataclass
class DefenseConfig:
    kind: str = "none"
    dpsgd: DpsgdConfig = field(default_factory=DpsgdConfig)
    mmd: MmdConfig = field(default_factory=MmdConfig)
    softlabel_teachers: int = 2

    def __post_init__(self):
        if self.kind not in DEFENSES:
            raise ConfigError(f"unknown defense {self.kind!r}")
        if self.softlabel_teachers < 2:
            raise ConfigError("soft-label defense needs at least 2 teacher folds")


# ---------------------------------------------------------------------------
# DP-SGD


def dpsgd_gradient(per_example_grads, config: DpsgdConfig, batch_size, rng):
    """Clip each example to ``clip_norm``, sum, add ``N(0, (sigma C)^2)`` noise, divide by batch size.

    ``per_example_grads`` is a list (one entry per parameter) of arrays whose
    leading axis indexes examples; ``None`` entries are passed through.
    """
    live = [g for g in per_example_grads if g is not None]
    if not live:
        return list(per_example_grads)
    b = live[0].shape[0]
    sq = np.zeros(b)
    for g in live:
        sq += (g.reshape(b, -1) ** 2).sum(axis=1)
    norms = np.sqrt(sq)
    with np.errstate(divide="ignore"):
        factor = np.minimum(1.0, config.clip_norm / norms)
    factor[norms == 0] = 1.0
    std = config.noise_multiplier * config.clip_norm
    out = []
    for g in per_example_grads:
        if g is None:
            out.append(None)
            continue
        total = np.tensordot(factor, g, axes=(0, 0))
        if std > 0:
            total = total + rng.normal(0.0, std, size=total.shape)
        out.append(total / batch_size)
    return out


def dpsgd_step(params, per_example_grads, config: DpsgdConfig, sgd: SgdConfig, epoch, batch_size, rng):
    """Privatise the gradient then take an ordinary momentum/weight-decay step.

    Noise enters before momentum, so it accumulates in the velocity.
    """
    for p, g in zip(params, dpsgd_gradient(per_example_grads, config, batch_size, rng)):
        p.grad = g
    sgd_step(params, sgd, epoch)


# ---------------------------------------------------------------------------
# MMD


def mmd_squared(x, y, bandwidth=1.0):
    """Biased (V-statistic) squared MMD with an RBF kernel, clamped at 0."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if len(x) == 0 or len(y) == 0:
        raise ConfigError("MMD needs non-empty sample sets")
    v = kernels.rbf_mean(x, x, bandwidth) + kernels.rbf_mean(y, y, bandwidth) - 2 * kernels.rbf_mean(x, y, bandwidth)
    return max(v, 0.0)


def mmd_squared_grad_x(x, y, bandwidth=1.0):
    """Gradient of the (unclamped) biased MMD^2 with respect to the rows of ``x``."""
    n, m = len(x), len(y)
    s2 = bandwidth * bandwidth
    kxx = kernels.rbf_matrix(x, x, bandwidth)
    kxy = kernels.rbf_matrix(x, y, bandwidth)
    # d k(a,b)/da = -k(a,b) (a-b) / s2
    gxx = -(kxx.sum(1)[:, None] * x - kxx @ x) / s2
    gxy = -(kxy.sum(1)[:, None] * x - kxy @ y) / s2
    return 2.0 * gxx / (n * n) - 2.0 * gxy / (n * m)


def softmax_backward(probs, grad_probs):
    """Chain ``dL/dp`` through softmax to ``dL/dlogits``."""
    return probs * (grad_probs - (grad_probs * probs).sum(axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# soft labels


def check_soft_labels(q, tol=1e-6):
    q = np.asarray(q, dtype=np.float64)
    bad = np.flatnonzero(np.abs(q.sum(axis=1) - 1.0) > tol)
    if bad.size:
        raise FormatError(f"soft-label row {bad[0]} does not sum to 1")
    return q


def soft_label_loss(logits, soft_labels):
    """Mean of ``-sum_c q_c log p_c`` and its gradient with respect to the logits."""
    q = check_soft_labels(soft_labels)
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    n = len(q)
    return float(-(q * logp).sum(axis=1).mean()), (np.exp(logp) - q) / n


def top1_soft_labels(labels, num_classes, top=0.99):
    """``top`` on the given class, the rest spread evenly over the other classes."""
    labels = np.asarray(labels, dtype=np.int64)
    q = np.full((len(labels), num_classes), (1.0 - top) / (num_classes - 1))
    q[np.arange(len(labels)), labels] = top
    return q


# ---------------------------------------------------------------------------
# output obfuscation


def obfuscate_output(probs, rng):
    """Replace each probability vector by random values sharing its ranking."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    n, c = probs.shape
    vals = rng.random((n, c))
    vals /= vals.sum(axis=1, keepdims=True)
    vals.sort(axis=1)
    order = np.argsort(probs, axis=1, kind="stable")
    out = np.empty_like(vals)
    np.put_along_axis(out, order, vals, axis=1)
    return out
