"""Poisoned training loop.

Variants:

* ``clean``       plain cross-entropy on the batch
* ``basic``       originals + encoding samples in one batch (single norm layers)
* ``dual-norm``   same loss, the model carries dual norm layers
* ``replacement`` a fraction of each batch is swapped for its encoding samples
* ``mgda``        min-norm convex combination of the two loss gradients
* ``fixed-coef``  ``loss_train + beta * loss_synthetic``
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .defenses import (
    DefenseConfig,
    dpsgd_step,
    mmd_squared,
    mmd_squared_grad_x,
    softmax_backward,
    top1_soft_labels,
)
from .encoder import encode_batch
from .errors import ConfigError, DimensionError
from .model import Model, check_dims
from .nn import SgdConfig, log_softmax, sgd_step
from .norm import DualNormLayer, EncodingSpec, NormLayer

VARIANTS = ("clean", "basic", "dual-norm", "replacement", "mgda", "fixed-coef")
ENCODING_VARIANTS = ("basic", "dual-norm", "mgda", "fixed-coef")


@dataclass
class AttackConfig:
    variant: str = "clean"
    spec: EncodingSpec = field(default_factory=EncodingSpec)
    replacement_ratio: float | None = None
    beta: float | None = None
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    cache_encodings: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown attack variant {self.variant!r}")
        if self.variant == "replacement":
            if self.replacement_ratio is None or not 0 <= self.replacement_ratio <= 1:
                raise ConfigError("replacement variant needs replacement_ratio in [0, 1]")
        elif self.replacement_ratio is not None:
            raise ConfigError("replacement_ratio only applies to the replacement variant")
        if self.variant == "fixed-coef":
            if self.beta is None or not self.beta > 0:
                raise ConfigError("fixed-coef variant needs beta > 0")
        elif self.beta is not None:
            raise ConfigError("beta only applies to the fixed-coef variant")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    @property
    def uses_encodings(self):
        return self.variant != "clean"


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    forward_passes: list = field(default_factory=list)
    forward_pass_count: int = 0
    wall_time: float = 0.0
    mgda_alpha: list = field(default_factory=list)

    def to_dict(self):
        return {
            "train_loss": self.train_loss,
            "train_acc": self.train_acc,
            "test_acc": self.test_acc,
            "forward_passes": self.forward_passes,
            "forward_pass_count": self.forward_pass_count,
            "wall_time": self.wall_time,
        }


def mgda_coefficients(g_train, g_syn):
    """Two-task min-norm weights: argmin over alpha in [0,1] of |alpha g1 + (1-alpha) g2|^2."""
    g1 = np.asarray(g_train, dtype=np.float64).ravel()
    g2 = np.asarray(g_syn, dtype=np.float64).ravel()
    if g1.shape != g2.shape:
        raise DimensionError("gradient vectors differ in length")
    diff = g1 - g2
    denom = float(diff @ diff)
    if denom < 1e-18:
        return 0.5, 0.5
    alpha = min(max(float((g2 - g1) @ g2) / denom, 0.0), 1.0)
    return alpha, 1.0 - alpha


def replace_batch(x, y, p, rng, spec: EncodingSpec, num_classes, encoder=None):
    """Swap ``floor(p * N)`` random rows for their encoding samples.

    Returns ``(x_mixed, y_mixed, replaced_indices)``; the batch size is unchanged.
    """
    if not 0 <= p <= 1:
        raise ConfigError("replacement ratio must be in [0, 1]")
    n = len(x)
    k = int(np.floor(p * n))
    x = np.array(x, dtype=np.float64)
    y = np.array(y, dtype=np.int64)
    if k == 0:
        return x, y, np.empty(0, dtype=np.int64)
    idx = np.sort(rng.choice(n, size=k, replace=False))
    if encoder is None:
        xs, ys, _ = encode_batch(x[idx], y[idx], spec, num_classes)
    else:
        xs, ys = encoder(idx)
    x[idx] = xs
    y[idx] = ys
    return x, y, idx


def _weighted_grad(logits, targets, weights):
    """Rows of ``weights * (softmax - q)`` and the weighted loss; ``targets`` are soft rows."""
    logp = log_softmax(logits)
    loss = float((weights * -(targets * logp).sum(axis=1)).sum())
    return loss, weights[:, None] * (np.exp(logp) - targets)


def _onehot(y, c):
    q = np.zeros((len(y), c))
    q[np.arange(len(y)), y] = 1.0
    return q


def malicious_loss(model: Model, x, y, spec: EncodingSpec, num_classes, encodings=None):
    """Mean CE on the originals plus mean CE on their encoding samples.

    Forwards both populations as one batch, back-propagates, and returns
    ``(loss, [param grads])``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = len(x)
    xs, ys = encodings if encodings is not None else encode_batch(x, y, spec, num_classes)[:2]
    logits = model.forward(np.vstack([x, xs]))
    targets = _onehot(np.concatenate([y, ys]), num_classes)
    loss, grad = _weighted_grad(logits, targets, np.full(2 * n, 1.0 / n))
    model.backward(grad)
    return loss, [p.grad for p in model.params()]


def _per_example_backward(model: Model, logits, targets, scale, record=None):
    """Stacked backward giving every record's own gradient (exact, including batch-norm coupling).

    ``record[r]`` names the training record row ``r`` belongs to; a member and
    its encoding sample form one record, since both loss terms come from it.
    """
    r, c = logits.shape
    record = np.arange(r) if record is None else np.asarray(record)
    probs = np.exp(log_softmax(logits))
    stack = np.zeros((int(record.max()) + 1, r, c))
    rows = np.arange(r)
    stack[record, rows] = scale[:, None] * (probs - targets)
    model.backward(stack)
    return [p.grad for p in model.params()]


def check_model_for_variant(model: Model, variant: str):
    kinds = {type(l) for l in model.layers}
    if variant == "dual-norm" and DualNormLayer not in kinds:
        raise ConfigError("dual-norm variant needs a model with dual norm layers")
    if variant in ("basic", "mgda", "fixed-coef") and DualNormLayer in kinds:
        raise ConfigError(f"{variant} variant expects a model without dual norm layers")


def train(
    model: Model,
    x,
    y,
    attack: AttackConfig,
    sgd: SgdConfig,
    num_classes: int,
    defense: DefenseConfig | None = None,
    test=None,
    validation=None,
    soft_targets=None,
    on_epoch_end=None,
):
    """Train ``model`` in place on members ``(x, y)``; returns a :class:`TrainReport`.

    ``validation`` (features) feeds the MMD defense, ``soft_targets`` (one
    row per member) the soft-label defense.  ``on_epoch_end(epoch, model,
    report)`` is called after every epoch (1-based epoch count).
    """
    defense = defense or DefenseConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, d = x.shape
    check_dims(model, d)
    check_model_for_variant(model, attack.variant)
    spec = attack.spec
    if defense.kind == "dpsgd" and attack.variant == "mgda":
        raise ConfigError("DP-SGD is not combined with the MGDA variant")
    if defense.kind == "mmd" and (validation is None or len(validation) == 0):
        raise ConfigError("MMD defense needs a validation set")
    if defense.kind == "softlabel":
        if soft_targets is None or len(soft_targets) != n:
            raise ConfigError("soft-label defense needs one soft-label row per member")
        soft_targets = np.asarray(soft_targets, dtype=np.float64)

    rng_shuffle = np.random.default_rng([attack.seed, 0x5117])
    rng_replace = np.random.default_rng([attack.seed, 0x7E91])
    rng_noise = np.random.default_rng([attack.seed, 0xD9])
    rng_val = np.random.default_rng([attack.seed, 0x3AD])

    cache = None
    if attack.cache_encodings and attack.uses_encodings:
        xs_all, ys_all, _ = encode_batch(x, y, spec, num_classes)
        cache = (xs_all, ys_all)

    def encodings_for(idx):
        if cache is not None:
            return cache[0][idx], cache[1][idx]
        xs, ys, _ = encode_batch(x[idx], y[idx], spec, num_classes)
        return xs, ys

    params = model.params()
    report = TrainReport()
    t0 = time.perf_counter()
    bs = attack.batch_size
    model.train()
    for epoch in range(attack.epochs):
        order = rng_shuffle.permutation(n)
        epoch_loss, steps, fwd_epoch = 0.0, 0, 0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            xb, yb = x[idx], y[idx]
            nb = len(idx)
            q_orig = soft_targets[idx] if defense.kind == "softlabel" else _onehot(yb, num_classes)

            if attack.variant == "replacement":
                xr, yr, rep = replace_batch(
                    xb, yb, attack.replacement_ratio, rng_replace, spec, num_classes,
                    encoder=lambda j: encodings_for(idx[j]),
                )
                q = q_orig.copy()
                if rep.size:
                    q[rep] = (
                        top1_soft_labels(yr[rep], num_classes)
                        if defense.kind == "softlabel"
                        else _onehot(yr[rep], num_classes)
                    )
                batch_x, targets = xr, q
                weights = np.full(nb, 1.0 / nb)
                n_orig = nb
            elif attack.uses_encodings:
                xs, ys = encodings_for(idx)
                q_enc = top1_soft_labels(ys, num_classes) if defense.kind == "softlabel" else _onehot(ys, num_classes)
                batch_x = np.vstack([xb, xs])
                targets = np.vstack([q_orig, q_enc])
                enc_w = attack.beta if attack.variant == "fixed-coef" else 1.0
                weights = np.concatenate([np.full(nb, 1.0 / nb), np.full(nb, enc_w / nb)])
                n_orig = nb
            else:
                batch_x, targets = xb, q_orig
                weights = np.full(nb, 1.0 / nb)
                n_orig = nb

            val_probs = None
            if defense.kind == "mmd" and defense.mmd.lam > 0:
                vsel = rng_val.choice(len(validation), size=min(nb, len(validation)), replace=False)
                model.eval()
                val_probs = np.exp(log_softmax(model.forward(validation[vsel])))
                model.train()
                fwd_epoch += len(vsel)

            logits = model.forward(batch_x)
            fwd_epoch += len(batch_x)
            loss, grad = _weighted_grad(logits, targets, weights)

            if val_probs is not None:
                probs = np.exp(log_softmax(logits[:n_orig]))
                lam = defense.mmd.lam
                loss += lam * mmd_squared(probs, val_probs, defense.mmd.bandwidth)
                gp = mmd_squared_grad_x(probs, val_probs, defense.mmd.bandwidth)
                grad[:n_orig] += lam * softmax_backward(probs, gp)

            if attack.variant == "mgda":
                g_train = grad.copy()
                g_train[nb:] = 0.0
                g_syn = grad - g_train
                model.backward(g_train)
                gt = [p.grad for p in params]
                model.backward(g_syn)
                gs = [p.grad for p in params]
                flat = lambda gl: np.concatenate([(g if g is not None else np.zeros_like(p.value)).ravel() for g, p in zip(gl, params)])
                a, b = mgda_coefficients(flat(gt), flat(gs))
                report.mgda_alpha.append(a)
                for p, g1, g2 in zip(params, gt, gs):
                    p.grad = a * g1 + b * g2
                sgd_step(params, sgd, epoch)
            elif defense.kind == "dpsgd":
                record = np.arange(len(batch_x)) % nb
                per_ex = _per_example_backward(model, logits, targets, weights * nb, record)
                dpsgd_step(params, per_ex, defense.dpsgd, sgd, epoch, nb, rng_noise)
            else:
                model.backward(grad)
                sgd_step(params, sgd, epoch)
            epoch_loss += loss
            steps += 1

        report.forward_pass_count += fwd_epoch
        report.forward_passes.append(fwd_epoch)
        report.train_loss.append(epoch_loss / max(steps, 1))
        report.train_acc.append(model.accuracy(x, y))
        if test is not None:
            report.test_acc.append(model.accuracy(*test))
        model.train()
        if on_epoch_end is not None:
            on_epoch_end(epoch + 1, model, report)
    report.wall_time = time.perf_counter() - t0
    model.eval()
    return report
