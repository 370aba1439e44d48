"""Two-party emulation with a passive observer.

Partners A and B each run their own generator, publish degraded draws
``i ~ x/k`` and ``j ~ y/k`` and estimate ``x . y / (n k)`` as ``V_A`` and
``V_B``.  The observer only ever sees ``(i, j)`` and is fitted to the
partners' time-averaged statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .distribution import MixtureDistribution, tidy
from .engine import EngineConfig, EngineState, init, step, substream
from .gap import RunningStats
from .strategy import ConstantStrategy, PartitionStrategy, Strategy, bilinear_fit, oracle_fit

ADVERSARIES = ("oracle", "bilinear", "partition", "constant")


def partner_config(config: EngineConfig, name: str) -> EngineConfig:
    """Config of one partner's generator, seeded from its own substream."""
    seed = substream(config.seed, name).bytes(len(config.seed))
    return replace(config, seed=seed)


@dataclass
class _History:
    """Equal-weight record of past distributions (only kept for the exact oracle)."""

    components: list

    def mixture(self) -> MixtureDistribution:
        w = 1.0 / len(self.components)
        pairs = []
        for phi in self.components:
            pairs.extend((w * cw, d) for cw, d in phi.components)
        return MixtureDistribution.of(pairs)


def fit_adversary(
    kind: str,
    sa: EngineState,
    sb: EngineState,
    config: EngineConfig,
    hist_a: _History | None = None,
    hist_b: _History | None = None,
    constant: float = 0.0,
) -> Strategy:
    k = config.k
    if kind == "constant":
        return ConstantStrategy(constant, config.n, k)
    if kind == "bilinear":
        return bilinear_fit(sa.avg_moments, k, sb.avg_moments)
    if kind == "partition":
        return PartitionStrategy.from_tidying(tidy(sa.avg_moments), tidy(sb.avg_moments), k)
    if kind == "oracle":
        return oracle_fit(hist_a.mixture(), hist_b.mixture(), k, config.oracle_n_max)
    raise ValueError(f"unknown adversary {kind!r}; choose from {ADVERSARIES}")


@dataclass(frozen=True)
class ProtocolReport:
    rounds: int
    adversary: str
    pair_gap: float
    pair_gap_se: float
    eve_gap: float
    eve_gap_se: float
    advantage_ratio: float
    advantage_ratio_se: float
    mean_va_sq: float
    cross_cov_max_z: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def protocol_sim(
    config: EngineConfig,
    rounds: int,
    adversary: str,
    rounds_per_step: int = 100,
    constant: float = 0.0,
    states: tuple[EngineState, EngineState] | None = None,
) -> ProtocolReport:
    """Run matured partner generators for ``rounds`` exchanges.

    Each partner advances one step every ``rounds_per_step`` rounds; the
    adversary is refitted after every step.
    """
    if adversary not in ADVERSARIES:
        raise ValueError(f"unknown adversary {adversary!r}; choose from {ADVERSARIES}")
    if adversary == "oracle" and config.n > config.oracle_n_max:
        raise ValueError(f"oracle adversary needs n <= {config.oracle_n_max}")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    ca, cb = partner_config(config, "protocol-A"), partner_config(config, "protocol-B")
    keep = adversary == "oracle"
    hist_a, hist_b = _History([]), _History([])

    def advance(state, cfg, hist):
        state = step(state, cfg)
        if keep:
            hist.components.append(state.phi)
        return state

    if states is None:
        sa, sb = init(ca), init(cb)
        if keep:
            hist_a.components.append(sa.phi)
            hist_b.components.append(sb.phi)
        for _ in range(config.maturity_steps):
            sa, sb = advance(sa, ca, hist_a), advance(sb, cb, hist_b)
    else:
        sa, sb = states
        if keep:
            hist_a.components.append(sa.phi)
            hist_b.components.append(sb.phi)

    rng_a = substream(ca.seed, "protocol-A")
    rng_b = substream(cb.seed, "protocol-B")
    rng_pub = substream(config.seed, "adversary")
    n, k = config.n, config.k
    pair, eve, sq = RunningStats(), RunningStats(), RunningStats()
    # sums for the independence test between the two partners' vectors
    sx = np.zeros(n)
    sy = np.zeros(n)
    sxy = np.zeros((n, n))
    sxy2 = np.zeros((n, n))
    pair_draws, eve_draws = [], []
    done = 0
    while done < rounds:
        omega = fit_adversary(adversary, sa, sb, config, hist_a, hist_b, constant)
        b = min(rounds_per_step, rounds - done)
        X = sa.phi.sample(rng_a, b).astype(float)
        Y = sb.phi.sample(rng_b, b).astype(float)
        I = (rng_pub.random(X.shape) < X / k).astype(np.int8)
        J = (rng_pub.random(Y.shape) < Y / k).astype(np.int8)
        va = (X * J).sum(axis=1) / n
        vb = (I * Y).sum(axis=1) / n
        w = omega.pairs(I, J)
        d_pair = (va - vb) ** 2
        d_eve = (w - va) ** 2
        pair.push(d_pair)
        eve.push(d_eve)
        sq.push(va**2)
        pair_draws.append(d_pair)
        eve_draws.append(d_eve)
        sx += X.sum(axis=0)
        sy += Y.sum(axis=0)
        prod = X[:, :, None] * Y[:, None, :]
        sxy += prod.sum(axis=0)
        sxy2 += (prod**2).sum(axis=0)
        done += b
        if done < rounds:
            sa, sb = advance(sa, ca, hist_a), advance(sb, cb, hist_b)

    dp = np.concatenate(pair_draws)
    de = np.concatenate(eve_draws)
    tot = len(dp)
    mp, me = float(dp.mean()), float(de.mean())
    ratio = me / mp if mp > 0 else math.inf
    # delta method for a ratio of means computed on the same rounds
    C = np.cov(np.vstack([dp, de])) if tot > 1 else np.zeros((2, 2))
    if mp > 0:
        var_r = C[1, 1] / mp**2 - 2 * me * C[0, 1] / mp**3 + me**2 * C[0, 0] / mp**4
        ratio_se = math.sqrt(max(var_r, 0.0) / tot)
    else:
        ratio_se = math.inf
    mx, my = sx / tot, sy / tot
    cross = sxy / tot - np.outer(mx, my)
    var_prod = sxy2 / tot - (sxy / tot) ** 2
    se = np.sqrt(np.maximum(var_prod, 1e-300) / tot)
    z = np.abs(cross) / se
    return ProtocolReport(
        rounds=rounds,
        adversary=adversary,
        pair_gap=pair.mean,
        pair_gap_se=pair.std_error,
        eve_gap=eve.mean,
        eve_gap_se=eve.std_error,
        advantage_ratio=ratio,
        advantage_ratio_se=ratio_se,
        mean_va_sq=sq.mean,
        cross_cov_max_z=float(np.max(z)),
    )
