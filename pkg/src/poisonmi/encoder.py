"""Membership-encoding samples.

Each target sample is hashed (MD5 over its features as little-endian
float64), the first eight digest bytes seed a SplitMix64 stream, Box-Muller
turns the stream into a Gaussian vector, and the vector is standardised
exactly to the adversary's mean and stdev.  Under the random-label policy the
label is the next SplitMix64 output modulo the number of classes.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, FormatError
from .norm import EncodingSpec

SAME_LABEL = "same-label"
RANDOM_LABEL = "random-label"
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class EncodingSample:
    features: np.ndarray
    label: int
    source_digest: bytes


def canonical_bytes(features) -> bytes:
    """Frozen hash-input layout: each feature as 8-byte IEEE-754 little-endian."""
    if isinstance(features, Sample):
        features = features.features
    return np.ascontiguousarray(features, dtype="<f8").tobytes()


def decode_canonical(data: bytes) -> np.ndarray:
    return np.frombuffer(data, dtype="<f8").copy()


def md5_digest(data: bytes) -> bytes:
    return hashlib.md5(data).digest()


def digest_to_seed(digest: bytes) -> int:
    if len(digest) != 16:
        raise FormatError(f"digest must be 16 bytes, got {len(digest)}")
    return struct.unpack("<Q", digest[:8])[0]


def _standardize(z, mean, stdev):
    mu = z.mean(axis=1, keepdims=True)
    sd = np.sqrt(((z - mu) ** 2).mean(axis=1, keepdims=True))
    return (z - mu) / sd * stdev + mean, sd[:, 0]


def encode_batch(features, labels, spec: EncodingSpec, num_classes: int):
    """Vectorised encoding of many targets.

    Returns ``(x_star, y_star, digests)``.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError("features must be a 2-D array")
    n, d = x.shape
    if d < 2:
        raise ConfigError("encoding samples need d >= 2")
    digests = [md5_digest(canonical_bytes(row)) for row in x]
    seeds = np.array([digest_to_seed(g) for g in digests], dtype=np.uint64)
    z, tail = kernels.gaussian_rows(seeds, d)
    out, sd = _standardize(z, spec.mean, spec.stdev)
    bad = np.flatnonzero(~(sd > 0))
    # zero empirical stdev has probability ~0; regenerate with seed + 1
    for i in bad:
        s = int(seeds[i])
        while True:
            s = (s + 1) & _MASK64
            zi, ti = kernels.gaussian_rows(np.array([s], dtype=np.uint64), d)
            oi, sdi = _standardize(zi, spec.mean, spec.stdev)
            if sdi[0] > 0:
                out[i], tail[i] = oi[0], ti[0]
                break
    if spec.label_policy == SAME_LABEL:
        y = np.asarray(labels, dtype=np.int64).copy()
    else:
        y = (tail % np.uint64(num_classes)).astype(np.int64)
    return out, y, digests


def gen_encoding_sample(sample: Sample, spec: EncodingSpec, d: int, num_classes: int) -> EncodingSample:
    feats = np.asarray(sample.features, dtype=np.float64)
    if feats.shape != (d,):
        raise ConfigError(f"expected {d} features, got shape {feats.shape}")
    x, y, g = encode_batch(feats[None, :], [sample.label], spec, num_classes)
    return EncodingSample(x[0], int(y[0]), g[0])


def perturb_target(sample: Sample, magnitude: float, rng: np.random.Generator) -> Sample:
    """Countermeasure: add uniform noise in [-magnitude, magnitude] per feature."""
    if not magnitude > 0:
        raise ConfigError("perturbation magnitude must be > 0")
    f = np.asarray(sample.features, dtype=np.float64)
    return Sample(f + rng.uniform(-magnitude, magnitude, size=f.shape), sample.label)


def perturb_features(x, magnitude: float, rng: np.random.Generator) -> np.ndarray:
    if not magnitude > 0:
        raise ConfigError("perturbation magnitude must be > 0")
    x = np.asarray(x, dtype=np.float64)
    return x + rng.uniform(-magnitude, magnitude, size=x.shape)
