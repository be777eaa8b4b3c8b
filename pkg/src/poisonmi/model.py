"""Sequential model container, MLP builder and finite-difference gradient checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .nn import DenseLayer, Dropout, ReLU, log_softmax, softmax_cross_entropy
from .norm import DualNormLayer, EncodingSpec, NormLayer, route_mask

NORM_KINDS = ("none", "standard", "dual")


class Model:
    """Ordered layers plus a train/eval flag.

    When any layer is a :class:`DualNormLayer` the routing mask is computed
    once from the raw input rows and passed to every layer.
    """

    def __init__(self, layers, spec: EncodingSpec | None = None, topology=None):
        self.layers = list(layers)
        self.spec = spec
        self.training = True
        self.topology = topology or {}
        self.needs_route = any(isinstance(l, DualNormLayer) for l in self.layers)
        if self.needs_route and spec is None:
            raise ConfigError("a dual-norm model needs an encoding spec for routing")
        self.last_route = None

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x, route=None):
        x = np.asarray(x, dtype=np.float64)
        if self.needs_route and route is None:
            route = route_mask(x, self.spec)
        self.last_route = route
        for layer in self.layers:
            x = layer.forward(x, self.training, route)
        return x

    __call__ = forward

    def backward(self, grad, input_grad=False):
        """Back-propagate ``dLoss/dlogits``; returns ``dLoss/dx`` if requested."""
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            grad = self.layers[i].backward(grad, input_grad=input_grad or i > 0)
        return grad

    def zero_grad(self):
        for p in self.params():
            p.grad = None

    def predict_proba(self, x, batch_size=4096):
        prev = self.training
        self.eval()
        try:
            outs = [np.exp(log_softmax(self.forward(x[i : i + batch_size]))) for i in range(0, len(x), batch_size)]
        finally:
            self.training = prev
        return np.concatenate(outs) if outs else np.empty((0, self.topology.get("dims", [0])[-1]))

    def accuracy(self, x, y):
        if len(x) == 0:
            return float("nan")
        return float((self.predict_proba(x).argmax(axis=1) == np.asarray(y)).mean())

    def flat_grad(self):
        return np.concatenate(
            [(p.grad if p.grad is not None else np.zeros_like(p.value)).ravel() for p in self.params()]
        )

    def state_arrays(self):
        """Named parameter and buffer arrays, in a stable order."""
        params, buffers = {}, {}
        for i, layer in enumerate(self.layers):
            if isinstance(layer, DualNormLayer):
                for tag, sub in (("primary", layer.primary), ("secondary", layer.secondary)):
                    for p in sub.params():
                        params[f"{i}.{tag}.{p.name}"] = p.value
            else:
                for p in layer.params():
                    params[f"{i}.{p.name}"] = p.value
            for name, arr in layer.buffers().items():
                buffers[f"{i}.{name}"] = arr
        return params, buffers


def build_mlp(dims, norm="standard", dropout=0.0, spec: EncodingSpec | None = None, seed=0):
    """``dims = [d_in, h1, ..., C]``; hidden blocks are dense -> norm -> relu -> dropout."""
    if norm not in NORM_KINDS:
        raise ConfigError(f"norm must be one of {NORM_KINDS}")
    if len(dims) < 2:
        raise ConfigError("need at least input and output dims")
    if norm == "dual" and spec is None:
        spec = EncodingSpec()
    rng = np.random.default_rng(seed)
    drop_rng = np.random.default_rng([seed, 0xD20])
    layers = []
    for k in range(len(dims) - 1):
        layers.append(DenseLayer(dims[k], dims[k + 1], rng))
        if k == len(dims) - 2:
            break
        if norm == "standard":
            layers.append(NormLayer(dims[k + 1]))
        elif norm == "dual":
            layers.append(DualNormLayer(dims[k + 1], spec))
        layers.append(ReLU())
        if dropout > 0:
            layers.append(Dropout(dropout, drop_rng))
    topology = {"dims": list(dims), "norm": norm, "dropout": float(dropout)}
    if norm == "dual":
        topology["spec"] = spec.to_dict()
    return Model(layers, spec if norm == "dual" else None, topology)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str
    passed: bool
    checked: int


def _rel(a, n):
    return abs(a - n) / max(1.0, abs(n))


def gradient_check(layers, x, tolerance=1e-6, rng=None, route=None, training=True, h=1e-5, max_entries=60):
    """Compare hand-written backward passes against central differences.

    The scalar checked is ``sum(out * R)`` for a fixed random ``R``.  Up to
    ``max_entries`` entries per tensor are probed (all of them if smaller).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.array(x, dtype=np.float64)
    model = layers if isinstance(layers, Model) else Model(layers, spec=EncodingSpec())
    model.training = training

    def fwd():
        return model.forward(x, route=route)

    out = fwd()
    r = rng.standard_normal(out.shape)
    gx = model.backward(r, input_grad=True)
    analytic = [(f"input", x, gx)] + [
        (f"{type(l).__name__}[{i}].{p.name}", p.value, p.grad)
        for i, l in enumerate(model.layers)
        for p in l.params()
        if p.grad is not None
    ]
    worst, worst_name, count = 0.0, "", 0
    for name, arr, grad in analytic:
        if grad is None or not np.all(np.isfinite(grad)):
            return GradCheckReport(float("inf"), name, False, count)
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + h
            fp = float((fwd() * r).sum())
            flat[j] = orig - h
            fm = float((fwd() * r).sum())
            flat[j] = orig
            num = (fp - fm) / (2 * h)
            err = _rel(grad.reshape(-1)[j], num)
            count += 1
            if not np.isfinite(err):
                return GradCheckReport(float("inf"), f"{name}[{j}]", False, count)
            if err > worst:
                worst, worst_name = err, f"{name}[{j}]"
    return GradCheckReport(worst, worst_name, worst <= tolerance, count)


def gradient_check_loss(logits, labels, tolerance=1e-6, h=1e-5):
    logits = np.array(logits, dtype=np.float64)
    _, grad = softmax_cross_entropy(logits, labels)
    worst, where = 0.0, ""
    for j in range(logits.size):
        flat = logits.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        fp, _ = softmax_cross_entropy(logits, labels)
        flat[j] = orig - h
        fm, _ = softmax_cross_entropy(logits, labels)
        flat[j] = orig
        err = _rel(grad.reshape(-1)[j], (fp - fm) / (2 * h))
        if err > worst:
            worst, where = err, f"logits[{j}]"
    return GradCheckReport(worst, where, worst <= tolerance, logits.size)


def check_dims(model: Model, d_in: int):
    dims = model.topology.get("dims")
    if dims and dims[0] != d_in:
        raise DimensionError(f"model expects {dims[0]} features, data has {d_in}")
