"""Observer strategies: maps from the published pair ``(i, j)`` to an estimate.

Three families are fitted from the observer's knowledge:

* :class:`TabulatedStrategy` -- the exact conditional expectation, tabulated
  over all ``2^n x 2^n`` experiment pairs (small ``n`` only);
* :class:`BilinearStrategy` -- ``V(i, j) = k i^T Omega j``;
* :class:`PartitionStrategy` -- products of the half-counts of ``i`` and ``j``
  along a pair of guessed segments.

Every strategy clamps its output to ``[0, 1/k]`` at evaluation time; fitting
is unconstrained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bernoulli import all_vectors, check_degradation, codes_of
from .distribution import Distribution, QuadraticMatrix, as_perm, inverse

ORACLE_N_MAX = 10


class Strategy:
    n: int
    k: float

    def raw_grid(self, I: np.ndarray, J: np.ndarray) -> np.ndarray:
        """Unclamped values for every pair of rows of ``I`` and ``J``."""
        raise NotImplementedError

    def raw_pairs(self, I: np.ndarray, J: np.ndarray) -> np.ndarray:
        """Unclamped values for row-aligned pairs ``(I[t], J[t])``."""
        raise NotImplementedError

    def clamp(self, values: np.ndarray) -> np.ndarray:
        return np.clip(values, 0.0, 1.0 / self.k)

    def grid(self, I, J, clamp: bool = True) -> np.ndarray:
        v = self.raw_grid(np.asarray(I), np.asarray(J))
        return self.clamp(v) if clamp else v

    def pairs(self, I, J, clamp: bool = True) -> np.ndarray:
        v = self.raw_pairs(np.asarray(I), np.asarray(J))
        return self.clamp(v) if clamp else v

    def __call__(self, i, j) -> float:
        i = np.asarray(i)
        j = np.asarray(j)
        if i.shape != (self.n,) or j.shape != (self.n,):
            raise ValueError(f"expected experiment vectors of length {self.n}")
        return float(self.pairs(i[None], j[None])[0])

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class TabulatedStrategy(Strategy):
    """Dense table indexed by the integer codes of ``i`` and ``j``."""

    table: np.ndarray
    n: int
    k: float

    def __post_init__(self):
        size = 1 << self.n
        if self.table.shape != (size, size):
            raise ValueError("table shape does not match n")
        if np.any(self.table < -1e-15) or np.any(self.table > 1.0 / self.k + 1e-15):
            raise ValueError("tabulated values must lie in [0, 1/k]")

    @classmethod
    def constant(cls, n: int, k: float, value: float) -> "TabulatedStrategy":
        return cls(np.full((1 << n, 1 << n), float(value)), n, k)

    def raw_grid(self, I, J):
        return self.table[np.ix_(codes_of(I), codes_of(J))]

    def raw_pairs(self, I, J):
        return self.table[codes_of(I), codes_of(J)]

    def reindexed(self, perm: np.ndarray) -> "TabulatedStrategy":
        """Strategy ``(i, j) -> self(sigma(i), sigma(j))`` with ``sigma(i) = i[perm]``."""
        V = all_vectors(self.n)
        c = codes_of(V[:, perm])
        return TabulatedStrategy(self.table[np.ix_(c, c)], self.n, self.k)

    def to_json(self) -> dict:
        values, counts = np.unique(self.table, return_counts=True)
        default = float(values[np.argmax(counts)])
        ci, cj = np.nonzero(self.table != default)
        entries = [[int(a), int(b), float(self.table[a, b])] for a, b in zip(ci, cj)]
        return {"type": "tabulated", "n": self.n, "k": self.k, "default": default, "entries": entries}


@dataclass(frozen=True, eq=False)
class BilinearStrategy(Strategy):
    Omega: np.ndarray
    k: float

    def __post_init__(self):
        Om = np.asarray(self.Omega, dtype=float)
        if Om.ndim != 2 or Om.shape[0] != Om.shape[1]:
            raise ValueError("Omega must be square")
        if not np.all(np.isfinite(Om)):
            raise ValueError("Omega has non-finite entries")
        object.__setattr__(self, "Omega", Om)
        check_degradation(self.k)

    @property
    def n(self) -> int:
        return self.Omega.shape[0]

    def raw_grid(self, I, J):
        return self.k * (np.asarray(I, float) @ self.Omega @ np.asarray(J, float).T)

    def raw_pairs(self, I, J):
        I = np.asarray(I, float)
        return self.k * np.einsum("tu,uv,tv->t", I, self.Omega, np.asarray(J, float))

    def to_json(self) -> dict:
        return {"type": "bilinear", "n": self.n, "k": self.k, "Omega": self.Omega.ravel().tolist()}


@dataclass(frozen=True, eq=False)
class PartitionStrategy(Strategy):
    """``(2k / n^2) (a_in b_in + a_out b_out)`` from the half-counts of ``i`` and ``j``.

    ``a_in`` counts the ones of ``i`` on the coordinates that ``sigma_a`` sends
    into the first half, i.e. ``sigma_a^{-1}(i) . I0``; ``b`` likewise for ``j``.
    """

    sigma_a: np.ndarray
    sigma_b: np.ndarray
    n: int
    k: float

    def __post_init__(self):
        object.__setattr__(self, "sigma_a", as_perm(self.sigma_a, self.n))
        object.__setattr__(self, "sigma_b", as_perm(self.sigma_b, self.n))
        check_degradation(self.k)

    @classmethod
    def from_tidying(cls, tidy_a: np.ndarray, tidy_b: np.ndarray, k: float) -> "PartitionStrategy":
        """Build from tidying permutations (the segment is ``tidy[:n/2]``)."""
        return cls(inverse(tidy_a), inverse(tidy_b), len(tidy_a), k)

    def masks(self) -> tuple[np.ndarray, np.ndarray]:
        h = self.n // 2
        return (self.sigma_a < h).astype(float), (self.sigma_b < h).astype(float)

    def omega(self) -> np.ndarray:
        """Equivalent bilinear matrix: the strategy is ``k i^T omega j``."""
        ma, mb = self.masks()
        return 2.0 / self.n**2 * (np.outer(ma, mb) + np.outer(1 - ma, 1 - mb))

    def _counts(self, I, J):
        ma, mb = self.masks()
        I = np.asarray(I, float)
        J = np.asarray(J, float)
        return I @ ma, I @ (1 - ma), J @ mb, J @ (1 - mb)

    def raw_grid(self, I, J):
        ai, ao, bi, bo = self._counts(I, J)
        return 2.0 * self.k / self.n**2 * (np.outer(ai, bi) + np.outer(ao, bo))

    def raw_pairs(self, I, J):
        ai, ao, bi, bo = self._counts(I, J)
        return 2.0 * self.k / self.n**2 * (ai * bi + ao * bo)

    def to_json(self) -> dict:
        return {
            "type": "partition",
            "n": self.n,
            "k": self.k,
            "sigma_a": self.sigma_a.tolist(),
            "sigma_b": self.sigma_b.tolist(),
        }


@dataclass(frozen=True, eq=False)
class ConstantStrategy(Strategy):
    value: float
    n: int
    k: float

    def raw_grid(self, I, J):
        return np.full((len(I), len(J)), self.value)

    def raw_pairs(self, I, J):
        return np.full(len(I), self.value)

    def to_json(self) -> dict:
        return {"type": "constant", "n": self.n, "k": self.k, "value": self.value}


def strategy_from_json(obj: dict) -> Strategy:
    kind = obj["type"]
    n, k = int(obj["n"]), float(obj["k"])
    if kind == "bilinear":
        return BilinearStrategy(np.array(obj["Omega"], dtype=float).reshape(n, n), k)
    if kind == "partition":
        return PartitionStrategy(np.array(obj["sigma_a"]), np.array(obj["sigma_b"]), n, k)
    if kind == "constant":
        return ConstantStrategy(float(obj["value"]), n, k)
    if kind == "tabulated":
        table = np.full((1 << n, 1 << n), float(obj["default"]))
        for a, b, v in obj["entries"]:
            table[a, b] = v
        return TabulatedStrategy(table, n, k)
    raise ValueError(f"unknown strategy type {kind!r}")


# ---------------------------------------------------------------------------
# exact oracle
# ---------------------------------------------------------------------------

def trial_matrix(X: np.ndarray, k: float) -> np.ndarray:
    """``A[c, t] = P(i = vector c | x = X[t])`` for trials degraded by ``k``."""
    n = X.shape[1]
    p = X / k
    bits = all_vectors(n).astype(bool)
    A = np.ones((1 << n, len(X)))
    for s in range(n):
        A *= np.where(bits[:, s : s + 1], p[None, :, s], 1.0 - p[None, :, s])
    return A


@dataclass(frozen=True)
class PosteriorSums:
    """Exhaustive sums over hidden parameters, indexed by experiment-vector code.

    ``D[i, j] = P(i, j)``, ``N[i, j] = E[x.y/(nk) ; i, j]`` and ``T = E[(x.y/(nk))^2]``.
    """

    D: np.ndarray
    N: np.ndarray
    T: float


def posterior_sums(distA: Distribution, distB: Distribution, k: float) -> PosteriorSums:
    n = distA.n
    X, P = distA.support()
    Y, Q = distB.support()
    A = trial_matrix(X, k) * P[None, :]
    B = trial_matrix(Y, k) * Q[None, :]
    D = np.outer(A.sum(axis=1), B.sum(axis=1))
    N = (A @ X) @ (B @ Y).T / (n * k)
    xy = X.astype(float) @ Y.T.astype(float)
    T = float(P @ (xy / (n * k)) ** 2 @ Q)
    return PosteriorSums(D, N, T)


def oracle_fit(
    distA: Distribution, distB: Distribution, k: float, oracle_n_max: int = ORACLE_N_MAX
) -> TabulatedStrategy:
    """Tabulate ``E[x . y / (n k) | i, j]``; unreachable pairs get the prior mean."""
    k = check_degradation(k)
    n = distA.n
    if distB.n != n:
        raise ValueError("distributions disagree on n")
    if n > oracle_n_max:
        raise ValueError(f"exact oracle limited to n <= {oracle_n_max}, got n={n}")
    sums = posterior_sums(distA, distB, k)
    prior = float(distA.moments().mu @ distB.moments().mu) / (n * k)
    with np.errstate(invalid="ignore", divide="ignore"):
        table = np.where(sums.D > 0, sums.N / sums.D, prior)
    return TabulatedStrategy(np.clip(table, 0.0, 1.0 / k), n, k)


# ---------------------------------------------------------------------------
# bilinear fitting
# ---------------------------------------------------------------------------

class InverseDidNotConverge(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"inverse iteration stopped after {iterations} steps, residual {residual:.3e}")
        self.iterations = iterations
        self.residual = residual


def neumann_inverse(Mtilde: np.ndarray, tol: float = 1e-10, max_iter: int | None = None) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix by ``X <- lam I + X (I - lam Mtilde)``.

    ``lam`` is the reciprocal of the largest absolute row sum, so the spectrum
    of ``I - lam Mtilde`` sits in ``[0, 1)``.  Starting from ``X = 0`` the
    iterate after ``q`` steps is ``lam * sum_{t<q} A^t``; each pass doubles
    ``q`` (``X <- X (I + A^q)``, ``A^q <- (A^q)^2``), so a pass is counted
    as one iteration.
    """
    Mt = np.asarray(Mtilde, dtype=float)
    n = Mt.shape[0]
    if Mt.shape != (n, n) or not np.allclose(Mt, Mt.T, rtol=1e-12, atol=1e-14):
        raise ValueError("matrix is not symmetric")
    try:
        np.linalg.cholesky(Mt)
    except np.linalg.LinAlgError:
        raise ValueError("matrix is not positive definite") from None
    if max_iter is None:
        max_iter = 64 * max(1, math.ceil(math.log2(max(n, 2))))
    eye = np.eye(n)
    lam = 1.0 / np.abs(Mt).sum(axis=1).max()
    A = eye - lam * Mt
    X = lam * eye
    Aq = A
    residual = np.inf
    for it in range(1, max_iter + 1):
        residual = np.abs(X @ Mt - eye).sum(axis=1).max()
        if residual <= tol:
            return X
        X = X + X @ Aq
        Aq = Aq @ Aq
    raise InverseDidNotConverge(max_iter, float(residual))


def effective_moments(q: QuadraticMatrix, k: float) -> np.ndarray:
    """``k E[i i^T]`` for ``i`` drawn from ``x / k``: first moments on the
    diagonal, off-diagonal second moments scaled by ``1 / k``."""
    off = q.M - np.diag(np.diag(q.M))
    return np.diag(q.mu) + off / k


def bilinear_fit(
    qa: QuadraticMatrix,
    k: float,
    qb: QuadraticMatrix | None = None,
    tol: float = 1e-10,
    use_neumann: bool = True,
) -> BilinearStrategy:
    """Minimiser of the bilinear gap: ``(1/(n k^2)) Ma^-1 M_A M_B Mb^-1`` with ``M.^-1``
    the effective-moment inverses.  Coordinates with zero first moment are
    dropped before inverting and come back as zero rows/columns.
    """
    k = check_degradation(k)
    qb = qa if qb is None else qb
    n = qa.n

    def inv(q, keep):
        E = effective_moments(q, k)[np.ix_(keep, keep)]
        if not len(keep):
            return E
        return neumann_inverse(E, tol=tol) if use_neumann else np.linalg.inv(E)

    ka = np.flatnonzero(qa.mu > 0)
    kb = ka if qb is qa else np.flatnonzero(qb.mu > 0)
    Ia = inv(qa, ka)
    Ib = Ia if qb is qa else inv(qb, kb)
    cross = (qa.M @ qb.M)[np.ix_(ka, kb)]
    Omega = np.zeros((n, n))
    Omega[np.ix_(ka, kb)] = Ia @ cross @ Ib / (n * k * k)
    if qb is qa:
        Omega = 0.5 * (Omega + Omega.T)
    return BilinearStrategy(Omega, k)
