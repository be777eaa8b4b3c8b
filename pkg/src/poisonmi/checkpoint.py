"""Versioned JSON checkpoints.

Document keys: ``version``, ``topology``, ``params``, ``running_stats``,
``epoch``, ``config_hash`` and an optional free-form ``meta`` object.
Floats are written with ``repr``, the shortest string that round-trips the
float64 exactly.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import Model, build_mlp
from .norm import EncodingSpec

FORMAT_VERSION = 1


def _encode(arrays):
    return {k: {"shape": list(v.shape), "data": [float(x) for x in np.ravel(v)]} for k, v in arrays.items()}


def save_checkpoint(model: Model, path, epoch=0, config_hash="", meta=None):
    params, buffers = model.state_arrays()
    doc = {
        "version": FORMAT_VERSION,
        "topology": model.topology,
        "params": _encode(params),
        "running_stats": _encode(buffers),
        "epoch": int(epoch),
        "config_hash": config_hash,
    }
    if meta:
        doc["meta"] = meta
    Path(path).write_text(json.dumps(doc))
    return Path(path)


def read_checkpoint(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise CheckpointError("corrupt checkpoint: top level is not an object")
    missing = {"version", "topology", "params", "running_stats", "epoch", "config_hash"} - set(doc)
    if missing:
        raise CheckpointError(f"corrupt checkpoint: missing {sorted(missing)}")
    if doc["version"] != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc['version']} (expected {FORMAT_VERSION})")
    return doc


def _same_topology(a, b):
    keys = ("dims", "norm", "dropout")
    if any(a.get(k) != b.get(k) for k in keys):
        return False
    return a.get("spec") == b.get("spec") if a.get("norm") == "dual" else True


def load_checkpoint(path, expected_topology=None) -> tuple[Model, dict]:
    """Rebuild the model in eval mode; returns ``(model, document)``."""
    doc = read_checkpoint(path)
    topo = doc["topology"]
    if expected_topology is not None and not _same_topology(topo, expected_topology):
        raise CheckpointError(f"topology mismatch: checkpoint has {topo}, expected {expected_topology}")
    try:
        spec = EncodingSpec(**topo["spec"]) if topo.get("norm") == "dual" else None
        model = build_mlp(topo["dims"], topo["norm"], topo.get("dropout", 0.0), spec=spec, seed=0)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt topology: {exc}") from None
    params, buffers = model.state_arrays()
    if set(params) != set(doc["params"]) or set(buffers) != set(doc["running_stats"]):
        raise CheckpointError("topology mismatch: parameter names differ")
    for i, layer in enumerate(model.layers):
        subs = [("", layer)]
        if hasattr(layer, "primary"):
            subs = [("primary.", layer.primary), ("secondary.", layer.secondary)]
        for prefix, sub in subs:
            for p in sub.params():
                p.value = _decode(doc["params"][f"{i}.{prefix}{p.name}"], p.value.shape)
        for name in layer.buffers():
            arr = _decode(doc["running_stats"][f"{i}.{name}"], None)
            if hasattr(layer, "primary"):
                which, attr = name.split("_", 1)
                setattr(getattr(layer, which), attr, arr)
            else:
                setattr(layer, name, arr)
    model.eval()
    return model, doc


def _decode(entry, shape):
    try:
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"corrupt array: {exc}") from None
    if shape is not None and arr.shape != tuple(shape):
        raise CheckpointError(f"topology mismatch: array shape {arr.shape} != {shape}")
    return arr
