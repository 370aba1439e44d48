"""The evaluation gap ``E[(omega(i, j) - x . y / (n k))^2]`` of an observer strategy.

Three evaluators: exhaustive enumeration over binary supports (small ``n``),
the closed form for bilinear strategies from second moments, and Monte Carlo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bernoulli import all_vectors, check_degradation
from .distribution import Distribution, QuadraticMatrix, moments
from .strategy import ORACLE_N_MAX, BilinearStrategy, PartitionStrategy, Strategy, posterior_sums


@dataclass(frozen=True)
class GapEstimate:
    value: float
    method: str
    std_error: float = 0.0
    samples: int = 0

    def __post_init__(self):
        if self.method not in ("exhaustive", "closed_form", "monte_carlo"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.std_error < 0:
            raise ValueError("std_error must be non-negative")

    def to_json(self) -> dict:
        return {"value": self.value, "method": self.method, "std_error": self.std_error, "samples": self.samples}


def gap_exhaustive(
    omega: Strategy,
    distA: Distribution,
    distB: Distribution | None = None,
    k: float | None = None,
    clamp: bool = True,
    oracle_n_max: int = ORACLE_N_MAX,
) -> GapEstimate:
    """Exact gap by summing over both binary supports and all experiment pairs.

    ``clamp=False`` evaluates the raw (unclamped) strategy values.
    """
    distB = distA if distB is None else distB
    k = check_degradation(omega.k if k is None else k)
    n = distA.n
    if n > oracle_n_max:
        raise ValueError(f"exhaustive gap limited to n <= {oracle_n_max}, got n={n}")
    V = all_vectors(n)
    W = omega.grid(V, V, clamp=clamp)
    s = posterior_sums(distA, distB, k)
    # sum over (i, j) of  w^2 P(i,j) - 2 w E[t; i,j] + E[t^2]
    value = math.fsum(np.ravel(W * (W * s.D - 2.0 * s.N))) + s.T
    return GapEstimate(max(value, 0.0), "exhaustive", 0.0, 0)


def _offdiag(M: np.ndarray) -> np.ndarray:
    return M - np.diag(np.diag(M))


def gap_bilinear_closed(
    Omega: np.ndarray, qa: QuadraticMatrix, k: float, qb: QuadraticMatrix | None = None
) -> GapEstimate:
    """Unclamped gap of ``V(i, j) = k i^T Omega j`` from the moment matrices.

    Six terms: the three quadratic ones use the off-diagonal part of the
    second-moment matrices (diagonal entries of ``E[i i^T]`` are first
    moments), then the cross term and the target's second moment.
    """
    k = check_degradation(k)
    qb = qa if qb is None else qb
    Om = np.asarray(Omega, dtype=float)
    n = qa.n
    if Om.shape != (n, n) or qb.n != n:
        raise ValueError("dimension mismatch")
    Ma, Mb = qa.M, qb.M
    Oa, Ob = _offdiag(Ma), _offdiag(Mb)
    Da, Db = qa.mu, qb.mu
    t1 = np.sum((Da[:, None] * Om) * (Om @ Ob)) / k
    t2 = np.sum((Oa @ Om) * (Om * Db[None, :])) / k
    t3 = np.sum(Om * Om * np.outer(Da, Db))
    t4 = np.sum((Oa @ Om @ Ob) * Om) / (k * k)
    t5 = -2.0 * np.sum(Om * (Ma @ Mb)) / (n * k * k)
    t6 = np.sum(Ma * Mb) / (n * n * k * k)
    value = math.fsum([t1, t2, t3, t4, t5, t6])
    return GapEstimate(value, "closed_form", 0.0, 0)


def gap_closed(strategy: Strategy, qa: QuadraticMatrix, qb: QuadraticMatrix | None = None) -> GapEstimate:
    """Unclamped closed-form gap for bilinear and partition strategies."""
    if isinstance(strategy, BilinearStrategy):
        Om = strategy.Omega
    elif isinstance(strategy, PartitionStrategy):
        Om = strategy.omega()
    else:
        raise TypeError(f"no closed form for {type(strategy).__name__}")
    return gap_bilinear_closed(Om, qa, strategy.k, qb)


@dataclass
class RunningStats:
    """Mergeable count / mean / centred sum of squares (pairwise update)."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def push(self, values: np.ndarray) -> "RunningStats":
        values = np.asarray(values, dtype=float).ravel()
        if values.size:
            mu = float(values.mean())
            other = RunningStats(values.size, mu, float(np.sum((values - mu) ** 2)))
            self.merge_in(other)
        return self

    def merge_in(self, other: "RunningStats") -> "RunningStats":
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean, other.m2
            return self
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / total
        self.m2 += other.m2 + delta * delta * self.count * other.count / total
        self.count = total
        return self

    @staticmethod
    def merge(a: "RunningStats", b: "RunningStats") -> "RunningStats":
        return RunningStats(a.count, a.mean, a.m2).merge_in(b)

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def std_error(self) -> float:
        return math.sqrt(max(self.variance, 0.0) / self.count) if self.count else 0.0


def gap_monte_carlo(
    omega: Strategy,
    distA: Distribution,
    distB: Distribution | None,
    k: float,
    samples: int,
    rng: np.random.Generator,
    batch: int = 65536,
    clamp: bool = True,
) -> GapEstimate:
    if samples < 100:
        raise ValueError("need at least 100 samples")
    distB = distA if distB is None else distB
    k = check_degradation(k)
    n = distA.n
    stats = RunningStats()
    left = samples
    while left:
        b = min(batch, left)
        X = distA.sample(rng, b).astype(float)
        Y = distB.sample(rng, b).astype(float)
        I = (rng.random(X.shape) < X / k).astype(np.int8)
        J = (rng.random(Y.shape) < Y / k).astype(np.int8)
        target = np.einsum("ts,ts->t", X, Y) / (n * k)
        stats.push((omega.pairs(I, J, clamp=clamp) - target) ** 2)
        left -= b
    return GapEstimate(stats.mean, "monte_carlo", stats.std_error, samples)


@dataclass(frozen=True)
class Baselines:
    var_va: float
    pair_gap: float


def baselines(distA: Distribution, distB: Distribution | None, k: float) -> Baselines:
    """Averaged ``Var(V_A | x, y)`` and ``E[(V_A - V_B)^2]`` from the moment matrices."""
    distB = distA if distB is None else distB
    qa, qb = moments(distA), moments(distB)
    return baselines_from_moments(qa, qb, k)


def baselines_from_moments(qa: QuadraticMatrix, qb: QuadraticMatrix, k: float) -> Baselines:
    k = check_degradation(k)
    n = qa.n
    # per-coordinate expectations of the pair closed forms; x and y independent
    ma, mb = qa.mu, qb.mu
    sa, sb = np.diag(qa.M), np.diag(qb.M)
    var_a = float(np.sum(sa * (mb - sb / k))) / (n * n * k)
    sq = float(np.sum(sa * mb + ma * sb - 2.0 * sa * sb / k)) / (n * n * k)
    return Baselines(var_a, sq)
