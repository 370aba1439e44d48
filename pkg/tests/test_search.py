import itertools
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drg.distribution import BlockMoments, LGridDistribution, identity
from drg.gap import gap_bilinear_closed, gap_closed
from drg.search import (
    _TranspositionState,
    bilinear_objective,
    overlap_coefficients,
    overlap_gap,
    overlap_polynomial,
    overlap_profile,
    relocation,
    search_bilinear,
    search_partition,
)
from drg.strategy import PartitionStrategy, bilinear_fit, effective_moments

from .helpers import random_mixture, random_pick

PERMS6 = np.array(list(itertools.permutations(range(6))))


def _instance(n, rng, k=16.0):
    Om = bilinear_fit(random_mixture(n, rng).moments(), k).Omega
    return Om, random_pick(n, rng).moments()


# --- bilinear search ------------------------------------------------------

def test_zero_strategy_gives_flat_objective():
    rng = np.random.default_rng(40)
    n, k = 8, 16.0
    q = random_pick(n, rng).moments()
    const = float(np.sum(q.M**2)) / (n * n * k * k)
    for _ in range(5):
        assert bilinear_objective(np.zeros((n, n)), q, k, rng.permutation(n)) == pytest.approx(const, rel=1e-14)
    out = search_bilinear(np.zeros((n, n)), q, k, target=2 * const, restarts=0)
    assert out.steps == 0 and not out.reached_target
    assert out.objective == pytest.approx(const, rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([6, 8, 12]), st.integers(0, 2**32 - 1))
def test_transposition_deltas_match_reevaluation(n, seed):
    rng = np.random.default_rng(seed)
    k = 16.0
    Om, q = _instance(n, rng, k)
    Om = Om + rng.normal(scale=np.abs(Om).max(), size=Om.shape)  # asymmetric too
    N = effective_moments(q, k)
    P = q.M @ q.M
    w = 2.0 / (n * k * k)
    const = float(np.sum(q.M**2)) / (n * n * k * k)
    perm = rng.permutation(n)
    state = _TranspositionState(Om, N, P, w, const, perm)
    base = bilinear_objective(Om, q, k, perm)
    assert state.value == pytest.approx(base, rel=1e-12)
    D = state.deltas()
    for a, b in itertools.combinations(range(n), 2):
        swapped = perm.copy()
        swapped[[a, b]] = swapped[[b, a]]
        assert D[a, b] == pytest.approx(bilinear_objective(Om, q, k, swapped) - base, abs=1e-12 * const)
    # the maintained products stay exact after a few applied swaps
    for _ in range(5):
        a, b = rng.choice(n, 2, replace=False)
        state.apply(a, b, state.deltas()[a, b])
        assert state.value == pytest.approx(bilinear_objective(Om, q, k, state.perm), rel=1e-10)


def _local_maxima(values):
    """Objectives of the permutations no transposition improves."""
    index = {tuple(p): t for t, p in enumerate(PERMS6)}
    out = []
    for t, p in enumerate(PERMS6):
        best = True
        for a, b in itertools.combinations(range(6), 2):
            s = p.copy()
            s[[a, b]] = s[[b, a]]
            if values[index[tuple(s)]] > values[t] + 1e-15:
                best = False
                break
        if best:
            out.append(values[t])
    return np.array(out)


def test_search_ends_at_exhaustive_local_maximum():
    rng = np.random.default_rng(41)
    n, k = 6, 16.0
    above = 0
    trials = 50
    for _ in range(trials):
        Om, q = _instance(n, rng, k)
        values = np.array([bilinear_objective(Om, q, k, p) for p in PERMS6])
        out = search_bilinear(Om, q, k, math.inf, rng=rng, start=rng.permutation(n))
        assert out.objective == pytest.approx(bilinear_objective(Om, q, k, out.sigma), rel=1e-12)
        local = _local_maxima(values)
        assert np.min(np.abs(local - out.objective)) <= 1e-12 * abs(out.objective)
        above += out.objective >= np.median(values)
    assert above / trials >= 0.8


def test_minimize_mode():
    rng = np.random.default_rng(42)
    n, k = 6, 16.0
    Om, q = _instance(n, rng, k)
    values = np.array([bilinear_objective(Om, q, k, p) for p in PERMS6])
    out = search_bilinear(Om, q, k, -math.inf, mode="minimize", rng=rng)
    assert out.objective <= np.median(values)
    with pytest.raises(ValueError):
        search_bilinear(Om, q, k, 0.0, mode="sideways")


def test_step_count_linear_in_n():
    rng = np.random.default_rng(43)
    worst = 0.0
    for n in (8, 16, 32):
        for _ in range(100 if n < 32 else 30):
            Om, q = _instance(n, rng)
            out = search_bilinear(Om, q, 16.0, math.inf, rng=rng, start=rng.permutation(n), restarts=0)
            worst = max(worst, out.steps / n)
    assert worst <= 2.0


def test_search_stops_at_target():
    rng = np.random.default_rng(44)
    n, k = 8, 16.0
    Om, q = _instance(n, rng, k)
    start = rng.permutation(n)
    v0 = bilinear_objective(Om, q, k, start)
    out = search_bilinear(Om, q, k, v0, start=start)
    assert out.reached_target and out.steps == 0


# --- partition search -----------------------------------------------------

def test_exchangeable_blocks_are_flat():
    b = BlockMoments(0.5, 0.3, 0.3, 0.5, 0.3, 8)
    g = overlap_profile(b, 16.0)
    assert np.allclose(g, g[0], rtol=1e-12)


def test_overlap_forms_agree():
    rng = np.random.default_rng(45)
    for n in (6, 8, 16, 64):
        b = random_pick(n, rng).block_moments()
        t = np.arange(n // 2 + 1)
        cells = overlap_gap(b, t, 16.0)
        assert np.allclose(overlap_profile(b, 16.0), cells, rtol=1e-11)
        assert np.allclose(np.polyval(overlap_polynomial(b, 16.0), t), cells, rtol=1e-9)
        c4, _, _ = overlap_coefficients(b, 16.0)
        assert c4 >= 0


def test_partition_search_matches_all_segments():
    rng = np.random.default_rng(46)
    n, k, h = 8, 16.0, 4
    for _ in range(10):
        pick = random_pick(n, rng)
        pick = LGridDistribution(pick.L, identity(n))
        sigma_m = rng.permutation(n)
        strat = PartitionStrategy(sigma_m, sigma_m, n, k)
        seg = set(np.flatnonzero(sigma_m < h))
        profile = overlap_profile(pick.block_moments(), k)
        gaps = []
        for J in itertools.combinations(range(n), h):
            moved = pick.permuted(relocation(np.array(J), n))
            g = gap_closed(strat, moved.moments()).value
            assert g == pytest.approx(profile[len(seg & set(J))], rel=1e-9)
            gaps.append(g)
        out = search_partition(pick.block_moments(), sigma_m, math.inf, k, rng=rng)
        assert out.objective == pytest.approx(max(gaps), rel=1e-12)
        achieved = gap_bilinear_closed(strat.omega(), pick.permuted(out.sigma).moments(), k).value
        assert achieved == pytest.approx(max(gaps), rel=1e-9)


def test_relocation_moves_block():
    rng = np.random.default_rng(47)
    n = 10
    J = np.sort(rng.choice(n, n // 2, replace=False))
    sigma = relocation(J, n)
    assert set(np.flatnonzero(sigma < n // 2)) == set(J.tolist())


def test_partition_search_time_independent_of_n():
    rng = np.random.default_rng(48)
    pick = random_pick(1024, rng)
    blocks = pick.block_moments()
    sigma_m = rng.permutation(1024)
    best = math.inf
    for _ in range(7):
        t0 = time.perf_counter()
        search_partition(blocks, sigma_m, math.inf, 16.0, rng=rng)
        best = min(best, time.perf_counter() - t0)
    assert best < 1e-3
