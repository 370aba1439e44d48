"""Hidden distributions over binary parameter vectors.

Every distribution the generator picks is an *L-grid*: a weight table
``L[r, s]`` over the number of ones ``r`` in the first half ``I0`` and ``s`` in
the second half, uniform within each weight class, then relabelled by a
permutation.  Mixtures of L-grids are what the generator emits.

Permutation convention: a permutation ``perm`` (0-based index array) acts on
vectors by ``sigma(x) = x[perm]``.  An L-grid carrying ``perm`` outputs
``sigma(x)`` for ``x`` drawn from its table, so its second-moment matrix is the
base matrix conjugated, ``M[perm][:, perm]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .bernoulli import all_vectors


# ---------------------------------------------------------------------------
# permutations
# ---------------------------------------------------------------------------

def as_perm(perm, n: int | None = None) -> np.ndarray:
    perm = np.asarray(perm, dtype=np.int64)
    if perm.ndim != 1:
        raise ValueError("permutation must be 1-D")
    if n is not None and len(perm) != n:
        raise ValueError(f"permutation has length {len(perm)}, expected {n}")
    if not np.array_equal(np.sort(perm), np.arange(len(perm))):
        raise ValueError("not a permutation of 0..n-1")
    return perm


def identity(n: int) -> np.ndarray:
    return np.arange(n, dtype=np.int64)


def inverse(perm: np.ndarray) -> np.ndarray:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return inv


def compose(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Permutation acting as ``p`` then ``q``: ``x[compose(p, q)] == x[p][q]``."""
    return p[q]


def half_swap(n: int) -> np.ndarray:
    """The involution exchanging the two halves coordinate by coordinate."""
    h = n // 2
    return np.concatenate([np.arange(h, n), np.arange(h)]).astype(np.int64)


def perm_support(perm: np.ndarray) -> np.ndarray:
    """Indices moved by ``perm``; ``len`` of it is the permutation's size."""
    return np.flatnonzero(perm != np.arange(len(perm)))


def random_half_shuffle(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform permutation that maps each half onto itself."""
    h = n // 2
    return np.concatenate([rng.permutation(h), h + rng.permutation(n - h)]).astype(np.int64)


def preserves_halves(perm: np.ndarray) -> bool:
    h = len(perm) // 2
    return bool(np.all(perm[:h] < h))


def swaps_halves(perm: np.ndarray) -> bool:
    h = len(perm) // 2
    return bool(np.all(perm[:h] >= h))


# ---------------------------------------------------------------------------
# moment containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadraticMatrix:
    """Second moments ``M[u, v] = E[x_u x_v]`` and first moments ``mu``."""

    M: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        mu = np.asarray(self.mu, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or mu.shape != (M.shape[0],):
            raise ValueError("moment shapes are inconsistent")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "mu", mu)

    @property
    def n(self) -> int:
        return self.M.shape[0]

    def permuted(self, perm: np.ndarray) -> "QuadraticMatrix":
        return QuadraticMatrix(self.M[np.ix_(perm, perm)], self.mu[perm])

    def scaled(self, w: float) -> "QuadraticMatrix":
        return QuadraticMatrix(w * self.M, w * self.mu)

    def __add__(self, other: "QuadraticMatrix") -> "QuadraticMatrix":
        return QuadraticMatrix(self.M + other.M, self.mu + other.mu)

    def check(self, atol: float = 1e-12) -> None:
        """Raise if not symmetric, outside [0, 1], off the binary diagonal, or not PSD."""
        M = self.M
        if not np.allclose(M, M.T, atol=atol, rtol=0):
            raise ValueError("moment matrix is not symmetric")
        if M.min() < -atol or M.max() > 1 + atol:
            raise ValueError("moment entries outside [0, 1]")
        if not np.allclose(np.diag(M), self.mu, atol=atol, rtol=0):
            raise ValueError("diagonal differs from first moments")
        if np.linalg.eigvalsh(M).min() < -1e-9:
            raise ValueError("moment matrix is not positive semidefinite")

    def to_json(self) -> dict:
        return {"n": self.n, "M": self.M.ravel().tolist(), "mu": self.mu.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "QuadraticMatrix":
        n = int(obj["n"])
        return cls(np.array(obj["M"], dtype=float).reshape(n, n), np.array(obj["mu"], dtype=float))


@dataclass(frozen=True)
class BlockMoments:
    """Second moments of a distribution exchangeable within each half.

    ``alpha``/``alpha_bar`` are the diagonal (equal to the first moments for
    binary support), ``beta``/``beta_bar`` the within-half off-diagonal values
    and ``gamma`` the cross-half value.
    """

    alpha: float
    beta: float
    gamma: float
    alpha_bar: float
    beta_bar: float
    n: int

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma, self.alpha_bar, self.beta_bar)
        if any(not (-1e-12 <= v <= 1 + 1e-12) for v in vals):
            raise ValueError(f"block moments outside [0, 1]: {vals}")
        if self.n % 2 or self.n < 2:
            raise ValueError("block moments need an even n >= 2")

    def matrix(self) -> np.ndarray:
        h = self.n // 2
        M = np.empty((self.n, self.n))
        M[:h, :h] = self.beta
        M[h:, h:] = self.beta_bar
        M[:h, h:] = self.gamma
        M[h:, :h] = self.gamma
        M[np.arange(h), np.arange(h)] = self.alpha
        M[np.arange(h, self.n), np.arange(h, self.n)] = self.alpha_bar
        return M

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> "BlockMoments":
        """Average a tidied moment matrix over its blocks."""
        n = M.shape[0]
        h = n // 2
        A, C, B = M[:h, :h], M[h:, h:], M[:h, h:]
        off = lambda X: (X.sum() - np.trace(X)) / (h * (h - 1)) if h > 1 else 0.0
        return cls(
            alpha=float(np.trace(A) / h),
            beta=float(off(A)),
            gamma=float(B.mean()),
            alpha_bar=float(np.trace(C) / h),
            beta_bar=float(off(C)),
            n=n,
        )


# ---------------------------------------------------------------------------
# L-grid distributions
# ---------------------------------------------------------------------------

_NORM_TOL = 1e-12


def _half_index(n: int) -> int:
    if n < 2 or n % 2:
        raise ValueError(f"n must be a positive even integer, got {n}")
    return n // 2


@dataclass(frozen=True, eq=False)
class LGridDistribution:
    L: np.ndarray
    perm: np.ndarray

    def __post_init__(self):
        L = np.array(self.L, dtype=float)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise ValueError("L must be a square table")
        n = 2 * (L.shape[0] - 1)
        _half_index(n)
        if np.any(L < 0):
            raise ValueError("L has negative weights")
        if abs(L.sum() - 1.0) > _NORM_TOL:
            raise ValueError(f"L weights sum to {L.sum()!r}, not 1")
        L.setflags(write=False)
        perm = as_perm(self.perm, n).copy()
        perm.setflags(write=False)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "perm", perm)

    @classmethod
    def point_mass(cls, n: int, r: int, s: int, perm=None) -> "LGridDistribution":
        h = _half_index(n)
        L = np.zeros((h + 1, h + 1))
        L[r, s] = 1.0
        return cls(L, identity(n) if perm is None else perm)

    @classmethod
    def uniform_binary(cls, n: int) -> "LGridDistribution":
        """Uniform distribution over {0,1}^n."""
        h = _half_index(n)
        b = np.array([math.comb(h, r) for r in range(h + 1)], dtype=float) / 2.0**h
        return cls(np.outer(b, b), identity(n))

    @property
    def n(self) -> int:
        return 2 * (self.L.shape[0] - 1)

    @property
    def h(self) -> int:
        return self.L.shape[0] - 1

    def permuted(self, tau: np.ndarray) -> "LGridDistribution":
        """Distribution of ``tau(X)`` for ``X`` drawn from ``self``."""
        return LGridDistribution(self.L, compose(self.perm, as_perm(tau, self.n)))

    def transposed(self) -> "LGridDistribution":
        return LGridDistribution(self.L.T, self.perm)

    def with_perm(self, perm: np.ndarray) -> "LGridDistribution":
        return LGridDistribution(self.L, perm)

    def canonical(self) -> "LGridDistribution":
        """Absorb a half-preserving (or half-swapping) permutation into the table."""
        if preserves_halves(self.perm):
            return LGridDistribution(self.L, identity(self.n))
        if swaps_halves(self.perm):
            return LGridDistribution(self.L.T, identity(self.n))
        return self

    def _block_values(self) -> tuple[float, float, float, float, float]:
        """First moments and within/cross-half second moments of the unpermuted table."""
        h = self.h
        r = np.arange(h + 1, dtype=float)
        L = self.L
        row, col = L.sum(axis=1), L.sum(axis=0)
        pair = h * (h - 1)
        alpha = float(row @ r) / h
        alpha_bar = float(col @ r) / h
        beta = float(row @ (r * (r - 1))) / pair if pair else 0.0
        beta_bar = float(col @ (r * (r - 1))) / pair if pair else 0.0
        gamma = float(r @ L @ r) / (h * h)
        return alpha, beta, gamma, alpha_bar, beta_bar

    def base_moments(self) -> QuadraticMatrix:
        """Moments before relabelling by ``perm``."""
        a, b, g, ab, bb = self._block_values()
        bm = BlockMoments(a, b, g, ab, bb, self.n)
        return QuadraticMatrix(bm.matrix(), np.repeat([a, ab], self.h))

    def moments(self) -> QuadraticMatrix:
        return self.base_moments().permuted(self.perm)

    def block_moments(self) -> BlockMoments:
        """Block parameters of the unpermuted table, read off ``L`` in O(h^2)."""
        a, b, g, ab, bb = self._block_values()
        return BlockMoments(a, b, g, ab, bb, self.n)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw binary parameter vectors; shape ``(n,)`` or ``(size, n)``."""
        m = 1 if size is None else int(size)
        h = self.h
        flat = rng.choice(self.L.size, size=m, p=self.L.ravel() / self.L.sum())
        r, s = np.divmod(flat, h + 1)
        ranks1 = np.argsort(np.argsort(rng.random((m, h)), axis=1), axis=1)
        ranks2 = np.argsort(np.argsort(rng.random((m, h)), axis=1), axis=1)
        x = np.concatenate([ranks1 < r[:, None], ranks2 < s[:, None]], axis=1).astype(np.int8)
        x = x[:, self.perm]
        return x[0] if size is None else x

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """All support points and their masses (exhaustive; small n only)."""
        n, h = self.n, self.h
        V = all_vectors(n)
        r = V[:, :h].sum(axis=1)
        s = V[:, h:].sum(axis=1)
        binom = np.array([math.comb(h, t) for t in range(h + 1)], dtype=float)
        P = self.L[r, s] / (binom[r] * binom[s])
        keep = P > 0
        return V[keep][:, self.perm], P[keep]

    def to_json(self) -> dict:
        return {"type": "lgrid", "n": self.n, "L": self.L.ravel().tolist(), "perm": self.perm.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "LGridDistribution":
        h = int(obj["n"]) // 2
        return cls(np.array(obj["L"], dtype=float).reshape(h + 1, h + 1), np.array(obj["perm"]))


@dataclass(frozen=True, eq=False)
class MixtureDistribution:
    components: tuple[tuple[float, LGridDistribution], ...] = field(default_factory=tuple)

    def __post_init__(self):
        comps = tuple((float(w), d) for w, d in self.components)
        if not comps:
            raise ValueError("mixture needs at least one component")
        if any(w < 0 for w, _ in comps):
            raise ValueError("negative mixture weight")
        if abs(sum(w for w, _ in comps) - 1.0) > _NORM_TOL:
            raise ValueError("mixture weights do not sum to 1")
        if len({d.n for _, d in comps}) != 1:
            raise ValueError("mixture components disagree on n")
        object.__setattr__(self, "components", comps)

    @classmethod
    def single(cls, dist: LGridDistribution) -> "MixtureDistribution":
        return cls(((1.0, dist),))

    @classmethod
    def of(cls, pairs: Iterable[tuple[float, LGridDistribution]]) -> "MixtureDistribution":
        return cls(tuple(pairs))

    @property
    def n(self) -> int:
        return self.components[0][1].n

    def moments(self) -> QuadraticMatrix:
        total = None
        for w, d in self.components:
            q = d.moments().scaled(w)
            total = q if total is None else total + q
        return total

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        m = 1 if size is None else int(size)
        weights = np.array([w for w, _ in self.components])
        which = rng.choice(len(weights), size=m, p=weights / weights.sum())
        out = np.empty((m, self.n), dtype=np.int8)
        for c, (_, d) in enumerate(self.components):
            idx = np.flatnonzero(which == c)
            if len(idx):
                out[idx] = d.sample(rng, len(idx))
        return out[0] if size is None else out

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.n
        mass = np.zeros(1 << n)
        weights = 1 << np.arange(n, dtype=np.int64)
        for w, d in self.components:
            X, P = d.support()
            np.add.at(mass, X.astype(np.int64) @ weights, w * P)
        codes = np.flatnonzero(mass > 0)
        X = ((codes[:, None] >> np.arange(n)) & 1).astype(np.int8)
        return X, mass[codes]

    def to_json(self) -> dict:
        return {
            "type": "mixture",
            "n": self.n,
            "components": [{"weight": w, "dist": d.to_json()} for w, d in self.components],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MixtureDistribution":
        return cls(tuple((c["weight"], LGridDistribution.from_json(c["dist"])) for c in obj["components"]))


Distribution = LGridDistribution | MixtureDistribution


def as_mixture(dist: Distribution) -> MixtureDistribution:
    return dist if isinstance(dist, MixtureDistribution) else MixtureDistribution.single(dist)


def moments(dist: Distribution) -> QuadraticMatrix:
    return dist.moments()


def sample_param(dist: Distribution, rng: np.random.Generator) -> np.ndarray:
    return dist.sample(rng)


def spread(dist: LGridDistribution) -> float:
    """Mean squared normalised gap between the two half-weights."""
    h = dist.h
    r = np.arange(h + 1)
    diff2 = (r[:, None] - r[None, :]) ** 2
    return float(np.sum(diff2 * dist.L)) / dist.n**2


# ---------------------------------------------------------------------------
# tidying
# ---------------------------------------------------------------------------

def crossing_sum(M: np.ndarray, perm: np.ndarray) -> float:
    """Sum of ``M[perm[u], perm[v]]`` over ``u`` in the first half, ``v`` in the second."""
    h = len(perm) // 2
    return float(M[np.ix_(perm[:h], perm[h:])].sum())


def _require_tidy_size(n: int) -> None:
    if n <= 4 or n % 2:
        raise ValueError(f"tidying needs an even n > 4, got {n}")


def _bisection_refine(A: np.ndarray, inside: np.ndarray, max_sweeps: int) -> tuple[np.ndarray, np.ndarray]:
    """Lower the crossing sum of ``A`` by score sorting, then best single swaps.

    ``inside`` marks the half that plays the role of I0.  Moving ``r`` out and
    ``s`` in changes the crossing sum by ``U_r - U_s - (A_rr + A_ss - 2 A_rs)``.
    """
    n = len(inside)
    h = n // 2
    diag = np.diag(A)
    scale = max(float(np.abs(A).sum()), 1.0)
    tol = 1e-13 * scale

    def cross(mask):
        m = mask.astype(float)
        return float(m @ (A @ (1.0 - m)))

    current = cross(inside)
    # score sorting; monotone for positive semidefinite A
    for _ in range(max_sweeps):
        U = A @ np.where(inside, 1.0, -1.0)
        order = np.lexsort((np.arange(n), -U))
        cand = np.zeros(n, dtype=bool)
        cand[order[:h]] = True
        if np.array_equal(cand, inside):
            break
        c = cross(cand)
        if c >= current - tol:
            break
        inside, current = cand, c

    U = A @ np.where(inside, 1.0, -1.0)
    G = diag[:, None] + diag[None, :] - 2.0 * A
    for _ in range(n * n):
        # rows leave the inside half, columns join it
        valid = inside[:, None] & ~inside[None, :]
        delta = np.where(valid, U[:, None] - U[None, :] - G, np.inf)
        r, s = divmod(int(np.argmin(delta)), n)
        if delta[r, s] >= -tol:
            break
        inside[r], inside[s] = False, True
        U += 2.0 * (A[:, s] - A[:, r])
    return inside, U


def tidy(M, maximize: bool = False, max_sweeps: int = 16) -> np.ndarray:
    """Tidying permutation of a second-moment matrix.

    Returns ``perm`` such that ``M[perm][:, perm]`` has a cross-half sum no
    single swap can lower; ``maximize=True`` targets the maximal sum instead.
    On random moment matrices at n = 6 this matched the exhaustive optimum in
    every trial.  Each half is ordered by decreasing score, ties by index.
    """
    M = M.M if isinstance(M, QuadraticMatrix) else np.asarray(M, dtype=float)
    n = M.shape[0]
    _require_tidy_size(n)
    A = -M if maximize else M
    inside, U = _bisection_refine(A, np.arange(n) < n // 2, max_sweeps)
    return np.lexsort((np.arange(n), -U, ~inside)).astype(np.int64)


@dataclass(frozen=True)
class CBounds:
    c_minus: float
    c_plus: float


def c_bounds(M) -> CBounds:
    M = M.M if isinstance(M, QuadraticMatrix) else np.asarray(M, dtype=float)
    n = M.shape[0]
    lo = 4.0 / n**2 * crossing_sum(M, tidy(M))
    hi = 4.0 / n**2 * crossing_sum(M, tidy(M, maximize=True))
    return CBounds(lo, hi)


def zeta_gap(dist: Distribution) -> float:
    """``c_plus - c_minus`` of the aggregate moment matrix."""
    b = c_bounds(dist.moments())
    return b.c_plus - b.c_minus


def zeta_membership(dist: Distribution, alpha: float) -> bool:
    return zeta_gap(dist) >= math.sqrt(alpha)


TIDY_BRANCHES = (("min", False), ("min", True), ("max", False), ("max", True))


def tidied_form_sample(
    dist: LGridDistribution,
    rng: np.random.Generator,
    branch: tuple[str, bool] | None = None,
) -> LGridDistribution:
    """Recompose ``dist`` with a randomly picked tidying permutation.

    The branch (minimal or maximal tidying, optionally followed by the half
    swap) is uniform unless forced; a uniform within-half shuffle follows and
    is absorbed into the table whenever the result keeps the halves intact.
    """
    if branch is None:
        branch = TIDY_BRANCHES[int(rng.integers(4))]
    side, flip = branch
    t = tidy(dist.moments(), maximize=(side == "max"))
    q = compose(dist.perm, t)
    if flip:
        q = compose(q, half_swap(dist.n))
    q = compose(q, random_half_shuffle(dist.n, rng))
    return dist.with_perm(q).canonical()


def distribution_from_json(obj: dict) -> Distribution:
    kind = obj.get("type")
    if kind == "lgrid":
        return LGridDistribution.from_json(obj)
    if kind == "mixture":
        return MixtureDistribution.from_json(obj)
    raise ValueError(f"unknown distribution type {kind!r}")
