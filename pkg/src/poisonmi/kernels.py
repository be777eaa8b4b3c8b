"""Hot inner loops, each with a numba kernel and a vectorised numpy twin.

The public functions dispatch on :data:`poisonmi._accel.HAS_NUMBA`.  Both
paths are kept importable so the benchmark and the tests can compare them.
The integer pipeline (SplitMix64) is bit-identical across backends; the
transcendental step of Box-Muller may differ in the last ulp.
"""
import math

import numpy as np

from ._accel import HAS_NUMBA, njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
TWO_NEG_53 = 1.0 / 9007199254740992.0
TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# SplitMix64 + Box-Muller


def n_uniforms(d):
    """Number of PRNG outputs consumed by one Gaussian vector of length d."""
    return 2 * ((d + 1) // 2)


@njit(cache=True)
def _gaussian_rows_nb(seeds, d):
    m = seeds.shape[0]
    npairs = (d + 1) // 2
    out = np.empty((m, d), dtype=np.float64)
    tail = np.empty(m, dtype=np.uint64)
    golden = np.uint64(0x9E3779B97F4A7C15)
    mix1 = np.uint64(0xBF58476D1CE4E5B9)
    mix2 = np.uint64(0x94D049BB133111EB)
    s30 = np.uint64(30)
    s27 = np.uint64(27)
    s31 = np.uint64(31)
    s11 = np.uint64(11)
    for r in range(m):
        state = seeds[r]
        for p in range(npairs):
            state = state + golden
            z = state
            z = (z ^ (z >> s30)) * mix1
            z = (z ^ (z >> s27)) * mix2
            z = z ^ (z >> s31)
            u1 = (float(z >> s11) + 0.5) * TWO_NEG_53
            state = state + golden
            z = state
            z = (z ^ (z >> s30)) * mix1
            z = (z ^ (z >> s27)) * mix2
            z = z ^ (z >> s31)
            u2 = (float(z >> s11) + 0.5) * TWO_NEG_53
            rad = math.sqrt(-2.0 * math.log(u1))
            out[r, 2 * p] = rad * math.cos(TWO_PI * u2)
            if 2 * p + 1 < d:
                out[r, 2 * p + 1] = rad * math.sin(TWO_PI * u2)
        state = state + golden
        z = state
        z = (z ^ (z >> s30)) * mix1
        z = (z ^ (z >> s27)) * mix2
        tail[r] = z ^ (z >> s31)
    return out, tail


def _splitmix_next(state):
    # numpy uint64 arrays wrap modulo 2**64 without warnings
    state = state + GOLDEN
    z = state
    z = (z ^ (z >> _S30)) * MIX1
    z = (z ^ (z >> _S27)) * MIX2
    return state, z ^ (z >> _S31)


def _gaussian_rows_np(seeds, d):
    seeds = np.asarray(seeds, dtype=np.uint64)
    m = seeds.shape[0]
    npairs = (d + 1) // 2
    out = np.empty((m, 2 * npairs), dtype=np.float64)
    state = seeds.copy()
    for p in range(npairs):
        state, z1 = _splitmix_next(state)
        state, z2 = _splitmix_next(state)
        u1 = ((z1 >> _S11).astype(np.float64) + 0.5) * TWO_NEG_53
        u2 = ((z2 >> _S11).astype(np.float64) + 0.5) * TWO_NEG_53
        rad = np.sqrt(-2.0 * np.log(u1))
        out[:, 2 * p] = rad * np.cos(TWO_PI * u2)
        out[:, 2 * p + 1] = rad * np.sin(TWO_PI * u2)
    _, tail = _splitmix_next(state)
    return out[:, :d].copy(), tail


def gaussian_rows(seeds, d):
    """Draw one standard-normal vector of length ``d`` per 64-bit seed.

    Returns ``(values, tail)`` where ``tail`` is the next SplitMix64 output
    after the Gaussian draws (used for the random-label policy).
    """
    seeds = np.ascontiguousarray(seeds, dtype=np.uint64)
    if HAS_NUMBA:
        return _gaussian_rows_nb(seeds, d)
    return _gaussian_rows_np(seeds, d)


def splitmix64_sequence(seed, n):
    """First ``n`` SplitMix64 outputs for a single seed, as Python ints."""
    state = np.array([seed], dtype=np.uint64)
    outs = []
    for _ in range(n):
        state, z = _splitmix_next(state)
        outs.append(int(z[0]))
    return outs


# ---------------------------------------------------------------------------
# per-row mean / biased stdev


@njit(cache=True)
def _row_stats_nb(x):
    n, d = x.shape
    mean = np.empty(n)
    std = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += x[i, j]
        mu = s / d
        acc = 0.0
        for j in range(d):
            t = x[i, j] - mu
            acc += t * t
        mean[i] = mu
        std[i] = math.sqrt(acc / d)
    return mean, std


def _row_stats_np(x):
    mean = x.mean(axis=1)
    std = np.sqrt(((x - mean[:, None]) ** 2).mean(axis=1))
    return mean, std


def row_stats(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if HAS_NUMBA:
        return _row_stats_nb(x)
    return _row_stats_np(x)


# ---------------------------------------------------------------------------
# RBF kernel mean


@njit(cache=True)
def _rbf_mean_nb(a, b, bandwidth):
    n, d = a.shape
    m = b.shape[0]
    scale = 1.0 / (2.0 * bandwidth * bandwidth)
    total = 0.0
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                t = a[i, k] - b[j, k]
                s += t * t
            total += math.exp(-s * scale)
    return total / (n * m)


def _rbf_matrix_np(a, b, bandwidth):
    sq = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    return np.exp(-sq / (2.0 * bandwidth * bandwidth))


def _rbf_mean_np(a, b, bandwidth):
    return float(_rbf_matrix_np(a, b, bandwidth).mean())


def rbf_matrix(a, b, bandwidth):
    """Pairwise ``exp(-|a_i - b_j|^2 / (2 bw^2))``."""
    return _rbf_matrix_np(np.asarray(a, float), np.asarray(b, float), bandwidth)


def rbf_mean(a, b, bandwidth):
    """Mean of the RBF kernel over all pairs of rows of ``a`` and ``b``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if HAS_NUMBA:
        return float(_rbf_mean_nb(a, b, float(bandwidth)))
    return _rbf_mean_np(a, b, bandwidth)
