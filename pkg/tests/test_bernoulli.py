import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drg import bernoulli as bc


def unit_vectors(n_min=1, n_max=8):
    return st.integers(n_min, n_max).flatmap(
        lambda n: st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n).map(np.array)
    )


# --- chi / pi_upper -------------------------------------------------------

def test_chi_certain_draw():
    assert bc.chi(np.ones(6), np.ones(6)) == 1.0


def test_chi_uniform_case():
    rng = np.random.default_rng(0)
    for n in (2, 5, 9):
        i = (rng.random(n) < 0.5).astype(int)
        assert bc.chi(i, np.full(n, 0.5)) == pytest.approx(2.0**-n, abs=0)


def test_chi_two_coordinates():
    assert bc.chi([1, 0], [0.25, 0.75]) == pytest.approx(0.0625, abs=1e-15)


def test_pi_upper_empty_and_small():
    assert bc.pi_upper(np.zeros(5), np.random.default_rng(1).random(5)) == 1.0
    assert bc.pi_upper([1, 0], [0.25, 0.75]) == pytest.approx(0.25, abs=1e-15)


def test_pi_upper_is_superset_sum_of_chi():
    rng = np.random.default_rng(2)
    V = bc.all_vectors(4)
    for _ in range(20):
        x = rng.random(4)
        j = (rng.random(4) < 0.5).astype(np.int8)
        supersets = [v for v in V if bc.is_subset(j, v)]
        assert len(supersets) == 2 ** (4 - j.sum())
        assert bc.pi_upper(j, x) == pytest.approx(math.fsum(bc.chi(v, x) for v in supersets), abs=1e-12)


@given(unit_vectors())
def test_chi_normalises(x):
    V = bc.all_vectors(len(x))
    assert math.fsum(bc.chi(V, x)) == pytest.approx(1.0, abs=1e-12)


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        bc.chi([1, 0, 1], [0.5, 0.5])


# --- psi / bernoulli_coeff ------------------------------------------------

def test_psi_weight_certain_and_symmetric():
    assert bc.psi_weight(np.ones(6), 6) == pytest.approx(1.0)
    for l in range(7):
        assert bc.psi_weight(np.full(6, 0.5), l) == pytest.approx(math.comb(6, l) / 64, abs=1e-15)


def test_psi_weight_matches_enumeration():
    rng = np.random.default_rng(3)
    x = rng.random(6)
    V = bc.all_vectors(6)
    probs = bc.chi(V, x)
    for l in range(7):
        assert bc.psi_weight(x, l) == pytest.approx(probs[V.sum(axis=1) == l].sum(), abs=1e-14)
    assert math.fsum(bc.psi_weight(x, l) for l in range(7)) == pytest.approx(1.0, abs=1e-12)


def test_psi_restricted_reduces_to_weight():
    rng = np.random.default_rng(4)
    x = rng.random(6)
    for r in range(7):
        assert bc.psi_restricted(np.ones(6), x, r) == pytest.approx(bc.psi_weight(x, r), abs=1e-15)
    i = np.array([1, 0, 1, 0, 0, 1])
    assert math.fsum(bc.psi_restricted(i, x, r) for r in range(4)) == pytest.approx(1.0, abs=1e-12)


def test_bernoulli_coeff():
    assert bc.bernoulli_coeff(0, 0, 0.0) == 1.0
    assert bc.bernoulli_coeff(1, 2, 0.5) == pytest.approx(0.5)
    assert math.fsum(bc.bernoulli_coeff(l, 10, 0.3) for l in range(11)) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        bc.bernoulli_coeff(3, 2, 0.5)


# --- sampling -------------------------------------------------------------

def test_sample_trial_zero_params():
    rng = np.random.default_rng(5)
    for _ in range(100):
        assert not bc.sample_trial(np.zeros(8), 3.0, rng).any()


def test_sample_trial_frequency():
    rng = np.random.default_rng(6)
    k, draws, n = 50.0, 10**5, 8
    X = np.ones((draws, n))
    freq = bc.sample_trial(X, k, rng).mean()
    se = math.sqrt((1 / k) * (1 - 1 / k) / (draws * n))
    assert abs(freq - 1 / k) <= 3 * se


def test_sample_trial_deterministic():
    x = np.random.default_rng(7).random(10)
    a = bc.sample_trial(x, 4.0, np.random.default_rng(99))
    b = bc.sample_trial(x, 4.0, np.random.default_rng(99))
    assert np.array_equal(a, b)


def test_degradation_must_exceed_one():
    with pytest.raises(ValueError):
        bc.sample_trial(np.ones(4), 1.0, np.random.default_rng(0))


# --- estimators and pair moments -----------------------------------------

def test_estimators():
    assert bc.v_a(np.ones(5), np.ones(5)) == 1.0
    assert bc.v_a(np.random.default_rng(0).random(5), np.zeros(5)) == 0.0
    assert bc.v_a([1, 1, 0, 0], [1, 0, 1, 0]) == pytest.approx(0.25)
    assert bc.v_b([1, 0, 1, 0], [1, 1, 0, 0]) == pytest.approx(0.25)


def test_pair_moments_degenerate():
    pm = bc.pair_moments(np.zeros(6), np.zeros(6), 3.0)
    assert (pm.mean, pm.var_a, pm.var_b, pm.expected_sq_diff) == (0.0, 0.0, 0.0, 0.0)


def test_pair_moments_all_ones():
    pm = bc.pair_moments(np.ones(4), np.ones(4), 2.0)
    assert pm.mean == pytest.approx(0.5)
    assert pm.expected_sq_diff == pytest.approx(1 / 8)
    assert pm.expected_sq_diff <= 2 / (4 * 2)


def test_pair_moments_monte_carlo():
    rng = np.random.default_rng(8)
    n, k, T = 8, 4.0, 10**6
    x, y = rng.random(n), rng.random(n)
    pm = bc.pair_moments(x, y, k)
    I = (rng.random((T, n)) < x / k).astype(float)
    J = (rng.random((T, n)) < y / k).astype(float)
    va, vb = J @ x / n, I @ y / n
    for sample, exact in ((va, pm.mean), (vb, pm.mean)):
        assert abs(sample.mean() - exact) <= 3 * sample.std() / math.sqrt(T)
    for sample, exact in (((va - pm.mean) ** 2, pm.var_a), ((vb - pm.mean) ** 2, pm.var_b), ((va - vb) ** 2, pm.expected_sq_diff)):
        assert abs(sample.mean() - exact) <= 3 * sample.std() / math.sqrt(T)


def test_pair_moments_brute_force():
    # exhaustive sum over both experiment vectors at n = 4
    rng = np.random.default_rng(9)
    n, k = 4, 3.0
    x, y = rng.random(n), rng.random(n)
    V = bc.all_vectors(n)
    pi, pj = bc.chi(V, x / k), bc.chi(V, y / k)
    va, vb = V @ x / n, V @ y / n
    exp_sq = sum(pi[a] * pj[b] * (va[b] - vb[a]) ** 2 for a, b in itertools.product(range(16), repeat=2))
    assert bc.pair_moments(x, y, k).expected_sq_diff == pytest.approx(exp_sq, rel=1e-12)


@settings(max_examples=200)
@given(unit_vectors(2, 16).flatmap(lambda x: st.tuples(st.just(x), st.lists(st.floats(0, 1), min_size=len(x), max_size=len(x)).map(np.array))),
       st.floats(1.0001, 200.0))
def test_pair_gap_bound_property(xy, k):
    x, y = xy
    n = len(x)
    assert bc.pair_moments(x, y, k).expected_sq_diff <= 2.0 / (n * k) + 1e-15


def test_all_vectors_round_trip():
    V = bc.all_vectors(5)
    assert np.array_equal(bc.codes_of(V), np.arange(32))
    assert np.array_equal(V[6], [0, 1, 1, 0, 0])


def test_set_algebra():
    i, j = np.array([1, 1, 0, 0]), np.array([1, 0, 1, 0])
    assert np.array_equal(bc.intersection(i, j), [1, 0, 0, 0])
    assert np.array_equal(bc.union(i, j), [1, 1, 1, 0])
    assert np.array_equal(bc.difference(i, j), [0, 1, 0, 0])
    assert np.array_equal(bc.complement(i), [0, 0, 1, 1])
    assert bc.is_subset([1, 0, 0, 0], i) and not bc.is_subset(j, i)
    with pytest.raises(ValueError):
        bc.as_bits([0, 2])
    with pytest.raises(ValueError):
        bc.as_param([0.5, 1.5])
