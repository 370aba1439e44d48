"""Searches for a permutation that makes a fresh pick score badly against a
fitted strategy.

``search_bilinear`` hill-climbs over transpositions on the exact unclamped
gap of a bilinear strategy against ``pick o sigma``.  ``search_partition``
picks the best overlap between the partition strategy's segment and the
pick's first-half block; the gap depends on that overlap only.

A returned ``sigma`` is applied as ``pick.permuted(sigma)``, whose second
moments are ``M[sigma][:, sigma]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bernoulli import check_degradation
from .distribution import BlockMoments, QuadraticMatrix, as_perm, compose, identity, inverse, random_half_shuffle
from .gap import gap_bilinear_closed
from .strategy import effective_moments

MAX_RESTARTS = 8


@dataclass(frozen=True)
class SearchOutcome:
    sigma: np.ndarray
    objective: float
    reached_target: bool
    steps: int
    restarts: int = 0
    trace: tuple = field(default=(), repr=False)

    def to_json(self) -> dict:
        return {
            "sigma": self.sigma.tolist(),
            "objective": self.objective,
            "reached_target": self.reached_target,
            "steps": self.steps,
            "restarts": self.restarts,
        }


def _phi(Y: np.ndarray) -> np.ndarray:
    """``f^T Y f`` for every ``f = e_a - e_b``."""
    d = Y.diagonal()
    return d[:, None] + d[None, :] - Y - Y.T


class _TranspositionState:
    """Gap of ``k i^T B j`` against moments permuted by the current ``perm``.

    With ``N`` the permuted effective moments and ``P`` the permuted squared
    second moments, the gap is ``tr(B^T N B N) - w <B, P> + const``.  A
    transposition ``T`` of ``(a, b)`` changes ``N`` by ``f h^T + h f^T`` with
    ``f = e_a - e_b`` and ``h = -N f + c f``, ``c = (N_aa + N_bb) / 2 - N_ab``,
    which lets every pair's delta be read off a few maintained products.
    """

    def __init__(self, B: np.ndarray, Nbase: np.ndarray, Pbase: np.ndarray, w: float, const: float, perm: np.ndarray):
        self.B = B
        self.C = B + B.T
        self.pB, self.pC = _phi(B), _phi(self.C)
        self.Nbase = Nbase
        self.Pbase = Pbase
        self.w = w
        self.const = const
        self.reset(perm)

    def reset(self, perm: np.ndarray) -> None:
        self.perm = perm.copy()
        B = self.B
        N = self.Nbase[np.ix_(perm, perm)]
        P = self.Pbase[np.ix_(perm, perm)]
        self.N, self.P = N, P
        self.BN = B @ N
        self.NB = N @ B
        self.NBN = self.NB @ N
        self.S = B @ N @ B.T + B.T @ N @ B
        self.SN = self.S @ N
        self.CP = self.C @ P
        self.value = float(np.sum(self.B * (N @ B @ N)) - self.w * np.sum(B * P) + self.const)

    def exact(self) -> float:
        N, P, B = self.N, self.P, self.B
        return float(np.sum(B * (N @ B @ N)) - self.w * np.sum(B * P) + self.const)

    def deltas(self) -> np.ndarray:
        """Change of the objective for every transposition ``(a, b)``."""
        N = self.N
        dN = N.diagonal()
        c = 0.5 * (dN[:, None] + dN[None, :]) - N
        dP = self.P.diagonal()
        cp = 0.5 * (dP[:, None] + dP[None, :]) - self.P
        pB = self.pB
        pBN, pNB = _phi(self.BN), _phi(self.NB)
        fBh = -pBN + c * pB
        hBf = -pNB + c * pB
        hBh = _phi(self.NBN) - c * (pBN + pNB) + c * c * pB
        fSh = -_phi(self.SN) + c * _phi(self.S)
        quartic = 2.0 * fSh + 2.0 * fBh * hBf + 2.0 * hBh * pB
        linear = -_phi(self.CP) + cp * self.pC
        out = quartic - self.w * linear
        np.fill_diagonal(out, 0.0)
        return out

    def apply(self, a: int, b: int, delta: float) -> None:
        n = len(self.perm)
        B, N, S = self.B, self.N, self.S
        f = np.zeros(n)
        f[a], f[b] = 1.0, -1.0
        c = 0.5 * (N[a, a] + N[b, b]) - N[a, b]
        h = N[b] - N[a] + c * f
        cp = 0.5 * (self.P[a, a] + self.P[b, b]) - self.P[a, b]
        hp = self.P[b] - self.P[a] + cp * f

        Bf, Bh, Btf, Bth = B @ f, B @ h, B.T @ f, B.T @ h
        # N' = N + f h^T + h f^T
        Nn = N.copy()
        Nn[[a, b]] = Nn[[b, a]]
        Nn[:, [a, b]] = Nn[:, [b, a]]
        BNn = self.BN + np.outer(Bf, h) + np.outer(Bh, f)
        NBold = self.NB
        NBn = NBold + np.outer(f, Bth) + np.outer(h, Btf)
        NBNn = (
            self.NBN
            + np.outer(f, h @ BNn)
            + np.outer(h, f @ BNn)
            + np.outer(NBold @ f, h)
            + np.outer(NBold @ h, f)
        )
        dS = np.outer(Bf, Bh) + np.outer(Bh, Bf) + np.outer(Btf, Bth) + np.outer(Bth, Btf)
        Sn = S + dS
        SNn = (
            self.SN
            + np.outer(S @ f, h)
            + np.outer(S @ h, f)
            + np.outer(Bf, Nn @ Bh) + np.outer(Bh, Nn @ Bf)
            + np.outer(Btf, Nn @ Bth) + np.outer(Bth, Nn @ Btf)
        )
        Pn = self.P.copy()
        Pn[[a, b]] = Pn[[b, a]]
        Pn[:, [a, b]] = Pn[:, [b, a]]
        CPn = self.CP + np.outer(self.C @ f, hp) + np.outer(self.C @ hp, f)

        self.N, self.P, self.BN, self.NB, self.NBN = Nn, Pn, BNn, NBn, NBNn
        self.S, self.SN, self.CP = Sn, SNn, CPn
        self.perm[[a, b]] = self.perm[[b, a]]
        self.value += delta


def bilinear_objective(Omega: np.ndarray, q: QuadraticMatrix, k: float, sigma: np.ndarray) -> float:
    """Exact unclamped gap of the bilinear strategy against moments ``q`` permuted by ``sigma``."""
    qs = q.permuted(sigma)
    return gap_bilinear_closed(Omega, qs, k).value


def search_bilinear(
    Omega: np.ndarray,
    M_prime: QuadraticMatrix,
    k: float,
    target: float,
    mode: str = "maximize",
    rng: np.random.Generator | None = None,
    start: np.ndarray | None = None,
    restarts: int = MAX_RESTARTS,
    max_steps: int | None = None,
    resync_every: int | None = None,
) -> SearchOutcome:
    """Best-improvement transposition climbing, with random restarts until the target is passed."""
    if mode not in ("maximize", "minimize"):
        raise ValueError(f"mode must be maximize or minimize, got {mode!r}")
    k = check_degradation(k)
    B = np.asarray(Omega, dtype=float)
    n = M_prime.n
    if B.shape != (n, n):
        raise ValueError("dimension mismatch between Omega and moments")
    sign = 1.0 if mode == "maximize" else -1.0
    rng = np.random.default_rng(0) if rng is None else rng
    max_steps = 4 * n * n if max_steps is None else max_steps
    resync_every = max(n, 8) if resync_every is None else resync_every

    Nbase = effective_moments(M_prime, k)
    Pbase = M_prime.M @ M_prime.M
    const = float(np.sum(M_prime.M * M_prime.M)) / (n * n * k * k)
    w = 2.0 / (n * k * k)
    scale = max(abs(const), 1e-300)

    def passed(v: float) -> bool:
        return v >= target if mode == "maximize" else v <= target

    best: SearchOutcome | None = None
    perm = identity(n) if start is None else as_perm(start, n).copy()
    state = _TranspositionState(B, Nbase, Pbase, w, const, perm)
    for attempt in range(restarts + 1):
        if attempt:
            state.reset(rng.permutation(n).astype(np.int64))
        trace = [state.value]
        steps = 0
        while not passed(state.value) and steps < max_steps:
            D = sign * state.deltas()
            flat = int(np.argmax(D))
            a, b = divmod(flat, n)
            if D[a, b] <= 1e-12 * scale:
                break
            state.apply(a, b, sign * D[a, b])
            steps += 1
            if steps % resync_every == 0:
                state.reset(state.perm)
            trace.append(state.value)
        value = state.exact()
        outcome = SearchOutcome(state.perm.copy(), value, passed(value), steps, attempt, tuple(trace))
        if best is None or sign * outcome.objective > sign * best.objective:
            best = outcome
        if best.reached_target:
            break
    return best


# ---------------------------------------------------------------------------
# partition method
# ---------------------------------------------------------------------------

def _diag(B: np.ndarray) -> np.ndarray:
    return np.diagonal(B, axis1=-2, axis2=-1)


@dataclass(frozen=True)
class _Cells:
    """A matrix constant on the blocks of a cell partition plus a per-cell diagonal shift.

    Arrays may carry a leading batch axis (one cell-size vector per batch entry).
    """

    block: np.ndarray  # (..., c, c)
    diag: np.ndarray  # (..., c)

    def matmul(self, other: "_Cells", sizes: np.ndarray) -> "_Cells":
        B1, d1, B2, d2 = self.block, self.diag, other.block, other.diag
        block = B1 @ (sizes[..., :, None] * B2) + B1 * d2[..., None, :] + d1[..., :, None] * B2
        return _Cells(block, d1 * d2)

    def hadamard(self, other: "_Cells") -> "_Cells":
        # diagonal entries are block + diag
        B = self.block * other.block
        full = (_diag(self.block) + self.diag) * (_diag(other.block) + other.diag)
        return _Cells(B, full - _diag(B))

    def inner(self, other: "_Cells", sizes: np.ndarray) -> np.ndarray:
        h = self.hadamard(other)
        quad = np.einsum("...p,...pq,...q->...", sizes, h.block, sizes)
        return quad + np.sum(sizes * h.diag, axis=-1)


def _cell_gap(omega: _Cells, M: _Cells, mu: np.ndarray, sizes: np.ndarray, n: int, k: float) -> np.ndarray:
    """Six-term closed-form gap with every matrix constant on cells."""
    off = _Cells(M.block, -_diag(M.block))
    zero = np.zeros_like(M.block)
    Dm = _Cells(zero, mu)
    ones = _Cells(np.ones_like(M.block), np.zeros_like(mu))
    t1 = Dm.matmul(omega, sizes).inner(omega.matmul(off, sizes), sizes) / k
    t2 = off.matmul(omega, sizes).inner(omega.matmul(Dm, sizes), sizes) / k
    t3 = omega.hadamard(omega).inner(Dm.matmul(ones, sizes).matmul(Dm, sizes), sizes)
    t4 = off.matmul(omega, sizes).matmul(off, sizes).inner(omega, sizes) / (k * k)
    t5 = -2.0 * omega.inner(M.matmul(M, sizes), sizes) / (n * k * k)
    t6 = M.inner(M, sizes) / (n * n * k * k)
    return t1 + t2 + t3 + t4 + t5 + t6


_IN_BLOCK = np.array([True, False, True, False])
_IN_SEG = np.array([True, True, False, False])


def overlap_gap(blocks: BlockMoments, t, k: float):
    """Unclamped gap of a partition strategy whose segment meets the pick's first-half block in ``t`` places.

    Cells: segment & block, segment only, block only, neither; sizes
    ``t, h - t, h - t, t``.  ``t`` may be an array (and need not be integral).
    """
    n = blocks.n
    h = n // 2
    t = np.asarray(t, dtype=float)
    sizes = np.stack([t, h - t, h - t, t], axis=-1)
    same = _IN_BLOCK[:, None] == _IN_BLOCK[None, :]
    # off-diagonal moments between cells by block membership; diagonal = mu
    Mb = np.where(same, np.where(_IN_BLOCK[:, None], blocks.beta, blocks.beta_bar), blocks.gamma)
    mu = np.where(_IN_BLOCK, blocks.alpha, blocks.alpha_bar)
    M = _Cells(Mb, mu - np.diag(Mb))
    Ob = np.where(_IN_SEG[:, None] == _IN_SEG[None, :], 2.0 / (n * n), 0.0)
    omega = _Cells(Ob, np.zeros(4))
    out = _cell_gap(omega, M, mu, sizes, n, k)
    return float(out) if out.ndim == 0 else out


def overlap_coefficients(blocks: BlockMoments, k: float) -> tuple[float, float, float]:
    """``(c4, c2, c0)`` with ``overlap_gap(t) = c4 s^4 + c2 s^2 + c0`` and ``s = t - n/4``.

    Expanded from the cell reduction above; the odd powers of ``s`` cancel.
    """
    n = blocks.n
    a, ab, b, bb, g = blocks.alpha, blocks.alpha_bar, blocks.beta, blocks.beta_bar, blocks.gamma
    d = b + bb - 2.0 * g
    e = a - ab
    scale = 1.0 / (k * k * n**4)
    c4 = 16.0 * d * d
    c2 = (
        8.0 * k * k * e * e
        + 4.0 * k * (n * (a * (3 * b - bb - 2 * g) + ab * (3 * bb - b - 2 * g)) - 4.0 * e * (b - bb))
        - 2.0 * (n * n * d * d - 2.0 * n * (b + bb) * d - 4.0 * (b - bb) ** 2 + 8.0 * n * (a * (b - g) + ab * (bb - g)))
    )
    c0 = (n * n / 16.0) * (
        8.0 * k * k * (a + ab) ** 2
        + 4.0 * k * (a + ab) * ((n - 4) * (b + bb) + 2.0 * g * n)
        + n * n * d * d
        + 4.0 * n * (b - bb) ** 2
        + 8.0 * n * g * (b + bb)
        - 8.0 * (b + bb) ** 2
        - 16.0 * (b - bb) ** 2
        + 8.0 * (n - 4) * (a * a + ab * ab - 2.0 * a * b - 2.0 * ab * bb)
        - 16.0 * n * g * (a + ab)
    )
    return c4 * scale, c2 * scale, c0 * scale


def overlap_profile(blocks: BlockMoments, k: float) -> np.ndarray:
    """Gap for every overlap ``t = 0 .. n/2``."""
    c4, c2, c0 = overlap_coefficients(blocks, check_degradation(k))
    s2 = (np.arange(blocks.n // 2 + 1) - blocks.n / 4.0) ** 2
    return (c4 * s2 + c2) * s2 + c0


def overlap_polynomial(blocks: BlockMoments, k: float) -> np.ndarray:
    """Coefficients (highest degree first) of the overlap gap as a quartic in ``t``."""
    c4, c2, c0 = overlap_coefficients(blocks, check_degradation(k))
    shift = np.poly1d([1.0, -blocks.n / 4.0])
    coef = (c4 * shift**4 + c2 * shift**2 + c0).coeffs
    return np.concatenate([np.zeros(5 - len(coef)), coef])


def relocation(J: np.ndarray, n: int) -> np.ndarray:
    """``sigma`` with ``sigma[u] < n/2`` exactly for ``u`` in ``J``.

    Applied to a tidied pick it moves the first-half block onto ``J``.
    """
    J = np.asarray(J, dtype=np.int64)
    mask = np.zeros(n, dtype=bool)
    mask[J] = True
    order = np.concatenate([np.flatnonzero(mask), np.flatnonzero(~mask)])
    return inverse(order)


def search_partition(
    blocks: BlockMoments,
    sigma_m: np.ndarray,
    target: float,
    k: float,
    mode: str = "maximize",
    rng: np.random.Generator | None = None,
) -> SearchOutcome:
    """Best overlap between the strategy segment ``{u : sigma_m[u] < n/2}`` and the pick's block."""
    if mode not in ("maximize", "minimize"):
        raise ValueError(f"mode must be maximize or minimize, got {mode!r}")
    k = check_degradation(k)
    n = blocks.n
    sigma_m = as_perm(sigma_m, n)
    h = n // 2
    rng = np.random.default_rng(0) if rng is None else rng
    g = overlap_profile(blocks, k)
    t = int(np.argmax(g) if mode == "maximize" else np.argmin(g))
    seg = np.flatnonzero(sigma_m < h)
    rest = np.flatnonzero(sigma_m >= h)
    J = np.concatenate([rng.permutation(seg)[:t], rng.permutation(rest)[: h - t]])
    sigma = compose(random_half_shuffle(n, rng), relocation(J, n))
    value = float(g[t])
    reached = value >= target if mode == "maximize" else value <= target
    return SearchOutcome(sigma, value, reached, 1, 0, tuple(g.tolist()))
