"""Degraded Bernoulli trials on parameter vectors.

A parameter vector ``x`` lives in ``[0, 1]^n``; an experiment vector ``i`` is a
0/1 vector of the same length.  The legitimate partners publish
``i ~ Bernoulli(x / k)`` and ``j ~ Bernoulli(y / k)`` and estimate the shared
quantity ``x . y / (n k)`` through ``V_A = x . j / n`` and ``V_B = i . y / n``.

Functions accept single vectors or, where it is cheap, stacks of vectors along
the leading axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _check_same_length(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"length mismatch: {a.shape[-1]} != {b.shape[-1]}")


def as_param(x) -> np.ndarray:
    """Validate a parameter vector (entries in [0, 1])."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("parameter vector must be 1-D")
    if np.any(x < 0.0) or np.any(x > 1.0) or not np.all(np.isfinite(x)):
        raise ValueError("parameter vector entries must lie in [0, 1]")
    return x


def as_bits(i) -> np.ndarray:
    i = np.asarray(i)
    if not np.all((i == 0) | (i == 1)):
        raise ValueError("experiment vector entries must be 0 or 1")
    return i.astype(np.int8)


def check_degradation(k: float) -> float:
    k = float(k)
    if not k > 1.0:
        raise ValueError(f"degradation factor k must be > 1, got {k}")
    return k


def all_vectors(n: int) -> np.ndarray:
    """All 2^n experiment vectors; row ``c`` holds the bits of ``c`` (bit s = coordinate s)."""
    codes = np.arange(1 << n, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n)) & 1).astype(np.int8)


def codes_of(bits: np.ndarray) -> np.ndarray:
    """Inverse of :func:`all_vectors` for a stack of bit rows."""
    bits = np.asarray(bits, dtype=np.int64)
    return bits @ (np.int64(1) << np.arange(bits.shape[-1], dtype=np.int64))


# ---------------------------------------------------------------------------
# set algebra on experiment vectors
# ---------------------------------------------------------------------------

def complement(i) -> np.ndarray:
    return (1 - as_bits(i)).astype(np.int8)


def intersection(i, j) -> np.ndarray:
    return (as_bits(i) & as_bits(j)).astype(np.int8)


def union(i, j) -> np.ndarray:
    return (as_bits(i) | as_bits(j)).astype(np.int8)


def difference(i, j) -> np.ndarray:
    """``i \\ j``: ones of ``i`` that are zero in ``j``."""
    return (as_bits(i) & (1 - as_bits(j))).astype(np.int8)


def is_subset(i, j) -> bool:
    return bool(np.all(as_bits(i) <= as_bits(j)))


# ---------------------------------------------------------------------------
# probabilities
# ---------------------------------------------------------------------------

def chi(i, x) -> np.ndarray | float:
    """Probability of drawing ``i`` from a Bernoulli trial with parameters ``x``."""
    i = np.asarray(i, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_same_length(i, x)
    out = np.prod(i * x + (1.0 - i) * (1.0 - x), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def pi_upper(j, x) -> np.ndarray | float:
    """Probability that a draw from ``x`` contains every one of ``j``."""
    j = np.asarray(j, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_same_length(j, x)
    out = np.prod(j * x + (1.0 - j), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _poisson_binomial(p: np.ndarray) -> np.ndarray:
    pmf = np.zeros(len(p) + 1)
    pmf[0] = 1.0
    for t, q in enumerate(p, start=1):
        pmf[1 : t + 1] = pmf[1 : t + 1] * (1.0 - q) + pmf[:t] * q
        pmf[0] *= 1.0 - q
    return pmf


def psi_weight(x, l: int) -> float:
    """Probability that a draw from ``x`` has exactly ``l`` ones."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if not 0 <= l <= n:
        raise ValueError(f"weight l={l} outside [0, {n}]")
    return float(_poisson_binomial(x)[l])


def psi_restricted(i, x, r: int) -> float:
    """Probability that a draw from ``x`` has exactly ``r`` ones inside the support of ``i``.

    Reduces to :func:`psi_weight` for ``i`` all-ones.  Nothing downstream uses it.
    """
    i = as_bits(i)
    x = np.asarray(x, dtype=float)
    _check_same_length(i, x)
    inside = x[i == 1]
    if not 0 <= r <= len(inside):
        raise ValueError(f"weight r={r} outside [0, {len(inside)}]")
    return float(_poisson_binomial(inside)[r])


def bernoulli_coeff(l: int, r: int, theta: float) -> float:
    """Binomial pmf ``C(r, l) theta^l (1 - theta)^(r - l)``."""
    if not (0 <= l <= r):
        raise ValueError(f"need 0 <= l <= r, got l={l}, r={r}")
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    return math.comb(r, l) * theta**l * (1.0 - theta) ** (r - l)


def sample_trial(x, k: float, rng: np.random.Generator) -> np.ndarray:
    """Draw one experiment vector (or a stack, if ``x`` is 2-D) from ``x / k``."""
    k = check_degradation(k)
    x = np.asarray(x, dtype=float)
    return (rng.random(x.shape) < x / k).astype(np.int8)


# ---------------------------------------------------------------------------
# legitimate-partner estimators
# ---------------------------------------------------------------------------

def v_a(x, j) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    j = np.asarray(j, dtype=float)
    _check_same_length(x, j)
    out = np.sum(x * j, axis=-1) / x.shape[-1]
    return float(out) if np.ndim(out) == 0 else out


def v_b(i, y) -> np.ndarray | float:
    return v_a(y, i)


@dataclass(frozen=True)
class PairMoments:
    mean: float
    var_a: float
    var_b: float
    expected_sq_diff: float


def pair_moments(x, y, k: float) -> PairMoments:
    """Closed-form moments of ``V_A`` and ``V_B`` for fixed ``x``, ``y``.

    ``expected_sq_diff`` never exceeds ``2 / (n k)``.
    """
    k = check_degradation(k)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_same_length(x, y)
    n = x.shape[-1]
    mean = float(x @ y) / (n * k)
    var_a = float(np.sum(x**2 * y * (1.0 - y / k))) / (n * n * k)
    var_b = float(np.sum(y**2 * x * (1.0 - x / k))) / (n * n * k)
    sq = float(np.sum(x * y * (x + y - 2.0 * x * y / k))) / (n * n * k)
    return PairMoments(mean, var_a, var_b, sq)
