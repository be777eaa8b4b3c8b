"""Datasets: Gaussian blobs and the label-first CSV format.

CSV rows are ``label,f0,f1,...`` with an optional header line.  Floats are
written with 17 significant digits so a round trip is lossless.  Splits live
in a companion file (``<name>.split``) holding one token per data row:
``member``, ``nonmember`` or ``test``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyInputError, ParseError

SPLITS = ("member", "nonmember", "test")


@dataclass
class Dataset:
    members_x: np.ndarray
    members_y: np.ndarray
    nonmembers_x: np.ndarray
    nonmembers_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int
    dim: int
    provenance: str = "synthetic-blobs"

    def split(self, name):
        return {
            "member": (self.members_x, self.members_y),
            "nonmember": (self.nonmembers_x, self.nonmembers_y),
            "test": (self.test_x, self.test_y),
        }[name]

    @property
    def test(self):
        return self.test_x, self.test_y

    def subset_members(self, k, rng=None):
        """Dataset with the first ``k`` members and ``k`` nonmembers (or a random k)."""
        mi = np.arange(len(self.members_x))[:k] if rng is None else np.sort(rng.choice(len(self.members_x), k, replace=False))
        ni = np.arange(len(self.nonmembers_x))[:k] if rng is None else np.sort(rng.choice(len(self.nonmembers_x), k, replace=False))
        return Dataset(
            self.members_x[mi], self.members_y[mi], self.nonmembers_x[ni], self.nonmembers_y[ni],
            self.test_x, self.test_y, self.num_classes, self.dim, self.provenance,
        )


def _empty(d):
    return np.empty((0, d)), np.empty(0, dtype=np.int64)


def gen_blobs(
    num_classes=8,
    dim=32,
    per_class_members=64,
    per_class_nonmembers=64,
    per_class_test=64,
    class_spread=1.5,
    within_spread=1.0,
    seed=0,
) -> Dataset:
    """Isotropic Gaussian blobs; class centres ~ N(0, class_spread^2 I)."""
    if dim < 2:
        raise ConfigError("blobs need dim >= 2")
    if num_classes < 2:
        raise ConfigError("blobs need at least 2 classes")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, class_spread, size=(num_classes, dim))
    parts = []
    for count in (per_class_members, per_class_nonmembers, per_class_test):
        if count == 0:
            parts.append(_empty(dim))
            continue
        y = np.repeat(np.arange(num_classes), count)
        xs = centers[y] + rng.normal(0.0, within_spread, size=(len(y), dim))
        perm = rng.permutation(len(y))
        parts.append((xs[perm], y[perm]))
    (mx, my), (nx, ny), (tx, ty) = parts
    return Dataset(mx, my, nx, ny, tx, ty, num_classes, dim, "synthetic-blobs")


def save_csv(ds: Dataset, path, header=True):
    """Write all rows (members, nonmembers, test) and the companion split file."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(["label"] + [f"f{j}" for j in range(ds.dim)])
        for name in SPLITS:
            xs, ys = ds.split(name)
            for row, lab in zip(xs, ys):
                w.writerow([int(lab)] + [format(v, ".17g") for v in row])
    with open(split_path_for(path), "w") as fh:
        for name in SPLITS:
            fh.write(f"{name}\n" * len(ds.split(name)[0]))
    return path


def split_path_for(path):
    path = Path(path)
    return path.with_suffix(".split")


def load_csv(path, num_classes, split_path=None, split_ratio=None, seed=0) -> Dataset:
    """Parse a label-first CSV.

    Splits come from ``split_path`` (default: the companion ``.split`` file if
    it exists); otherwise ``split_ratio`` of the rows become members and the
    rest nonmembers, chosen by a seeded permutation.
    """
    path = Path(path)
    labels, rows = [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if lineno == 1 and rec[0].strip().lower() == "label":
                continue
            if width is None:
                width = len(rec)
                if width < 2:
                    raise ParseError("row needs a label and at least one feature", lineno)
            elif len(rec) != width:
                raise ParseError(f"expected {width} columns, got {len(rec)}", lineno)
            try:
                lab = int(rec[0])
                feats = [float(c) for c in rec[1:]]
            except ValueError as exc:
                raise ParseError(f"non-numeric cell ({exc})", lineno) from None
            if not 0 <= lab < num_classes:
                raise ParseError(f"label {lab} out of range [0, {num_classes})", lineno)
            labels.append(lab)
            rows.append(feats)
    if not rows:
        raise EmptyInputError(f"{path} contains no data rows")
    x = np.array(rows, dtype=np.float64)
    y = np.array(labels, dtype=np.int64)
    d = x.shape[1]

    sp = Path(split_path) if split_path is not None else split_path_for(path)
    if split_path is not None or (split_ratio is None and sp.exists()):
        tokens = [t.strip() for t in sp.read_text().splitlines() if t.strip()]
        if len(tokens) != len(y):
            raise ParseError(f"split file has {len(tokens)} entries for {len(y)} rows")
        for i, t in enumerate(tokens, start=1):
            if t not in SPLITS:
                raise ParseError(f"unknown split token {t!r}", i)
        tokens = np.array(tokens)
        sel = {name: tokens == name for name in SPLITS}
    else:
        ratio = 0.5 if split_ratio is None else split_ratio
        if not 0 <= ratio <= 1:
            raise ConfigError("split ratio must be in [0, 1]")
        perm = np.random.default_rng(seed).permutation(len(y))
        k = int(round(ratio * len(y)))
        member = np.zeros(len(y), dtype=bool)
        member[perm[:k]] = True
        sel = {"member": member, "nonmember": ~member, "test": np.zeros(len(y), dtype=bool)}
    return Dataset(
        x[sel["member"]], y[sel["member"]], x[sel["nonmember"]], y[sel["nonmember"]],
        x[sel["test"]], y[sel["test"]], num_classes, d, "csv",
    )
