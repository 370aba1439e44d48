"""Acceptance checks shared by ``drg verify`` and the test suite.

Each check returns a :class:`CheckResult`; none of them raises on a failed
property.  Thresholds live in :data:`DEFAULT_BOUNDS` so a caller can perturb
one and watch the harness go red.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import bernoulli as bc
from .distribution import (
    LGridDistribution,
    MixtureDistribution,
    c_bounds,
    crossing_sum,
    tidy,
)
from .engine import EngineConfig, required_seed_bits, detect_period, first_recurrence, fresh_zeta, init, run, step
from .gap import baselines, gap_bilinear_closed, gap_exhaustive
from .search import search_bilinear
from .strategy import BilinearStrategy, PartitionStrategy, bilinear_fit, oracle_fit

# Slack constants of the analytic bounds and the defeat separation.
DEFAULT_BOUNDS = {
    "pair_gap": 2.0,  # E[(V_A - V_B)^2] <= c / (n k)
    "oracle": 6.0,  # exact oracle gap <= c / (n k)
    "bilinear": 5.0,  # fitted bilinear gap <= c / (n k)
    "defeat_multiple": 10.0,  # defeat separation, in pair-gap units
}

# Average-gap floor for the refitted adversary, in units of 1/n.  Frozen from
# the calibration sweep in `calibrate_kappa` (seeds 101..105, n = 8, k = 16):
# the smallest n * average gap observed was 0.002887 (seed 104); half of it is
# registered.
KAPPA = 0.00144
CALIBRATION_SEEDS = (101, 102, 103, 104, 105)


@dataclass
class CheckResult:
    number: int
    name: str
    claim: str
    passed: bool
    detail: str
    seconds: float = 0.0
    data: dict = field(default_factory=dict)

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _seed(i: int, n: int) -> bytes:
    return int(i).to_bytes(max(math.ceil(required_seed_bits(n) / 8), 8), "big")


def random_pick(n: int, rng: np.random.Generator, config: EngineConfig | None = None) -> LGridDistribution:
    """A fresh acceptable pick, relabelled by a uniform permutation."""
    config = EngineConfig(n=n, seed=_seed(1, n)) if config is None else config
    return fresh_zeta(config, rng).permuted(rng.permutation(n))


def random_mixture(n: int, rng: np.random.Generator, parts: int = 2) -> MixtureDistribution:
    w = rng.dirichlet(np.ones(parts))
    return MixtureDistribution.of([(float(wi), random_pick(n, rng)) for wi in w])


def random_second_moments(n: int, rng: np.random.Generator, parts: int = 4) -> np.ndarray:
    """Second moments of a random mixture of product Bernoulli laws."""
    M = np.zeros((n, n))
    for wi, p in zip(rng.dirichlet(np.ones(parts)), rng.random((parts, n))):
        M += wi * (np.outer(p, p) + np.diag(p - p * p))
    return M


# ---------------------------------------------------------------------------
# the criteria
# ---------------------------------------------------------------------------

@_timed
def check_pair_gap(bounds=DEFAULT_BOUNDS, seed: int = 1, mc_samples: int = 10**6) -> CheckResult:
    rng = np.random.default_rng(seed)
    c = bounds["pair_gap"]
    worst = 0.0
    for _ in range(10**4):
        n = 2 * int(rng.integers(3, 33))
        k = float(1.0 + rng.exponential(8.0)) + 1e-9
        x, y = rng.random(n), rng.random(n)
        if rng.random() < 0.2:
            x, y = np.round(x), np.round(y)
        val = bc.pair_moments(x, y, k).expected_sq_diff
        worst = max(worst, val * n * k)
    n, k = 32, 4.0
    x, y = rng.random(n), rng.random(n)
    exact = bc.pair_moments(x, y, k).expected_sq_diff
    total, total2, left = 0.0, 0.0, mc_samples
    while left:
        b = min(left, 200_000)
        I = (rng.random((b, n)) < x / k).astype(float)
        J = (rng.random((b, n)) < y / k).astype(float)
        d = ((J @ x) / n - (I @ y) / n) ** 2
        total += d.sum()
        total2 += (d * d).sum()
        left -= b
    mean = total / mc_samples
    se = math.sqrt(max(total2 / mc_samples - mean**2, 0.0) / mc_samples)
    z = abs(mean - exact) / se
    ok = worst <= c and z <= 3.0
    return CheckResult(
        1, "pair-gap bound", "E[(V_A-V_B)^2] <= 2/(nk) and Monte Carlo agreement", ok,
        f"max n k E[(V_A-V_B)^2] = {worst:.4f} (bound {c}); MC z = {z:.2f}",
        data={"worst": worst, "z": z},
    )


@_timed
def check_oracle_efficiency(bounds=DEFAULT_BOUNDS, seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    n, k = 8, 4.0
    c = bounds["oracle"]
    ratios = []
    for _ in range(5):
        dist = random_pick(n, rng)
        orc = oracle_fit(dist, dist, k)
        ratios.append(gap_exhaustive(orc, dist, dist).value * n * k)
    ok = max(ratios) <= c
    return CheckResult(
        2, "oracle efficiency", "exact oracle gap <= 6/(nk)", ok,
        f"max n k gap = {max(ratios):.4f} (bound {c})", data={"ratios": ratios},
    )


@_timed
def check_bilinear_bound(bounds=DEFAULT_BOUNDS, seed: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    c = bounds["bilinear"]
    worst = 0.0
    failures = 0
    for n in (8, 16, 32):
        for k in (4.0, 16.0):
            for _ in range(20):
                q = random_pick(n, rng).moments()
                s = bilinear_fit(q, k)
                val = gap_bilinear_closed(s.Omega, q, k).value
                worst = max(worst, val * n * k)
                failures += not (val < c / (n * k) + 1e-9)
    ok = failures == 0
    return CheckResult(
        3, "bilinear fit bound", "fitted bilinear gap <= 5/(nk)", ok,
        f"max n k gap = {worst:.4f} (bound {c}), {failures} violations of 120",
        data={"worst": worst},
    )


@_timed
def check_tidy_optimality(bounds=DEFAULT_BOUNDS, seed: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    n = 6
    perms = np.array(list(itertools.permutations(range(n))))
    worst = 0.0
    for _ in range(50):
        M = random_second_moments(n, rng)
        best = min(crossing_sum(M, p) for p in perms)
        got = crossing_sum(M, tidy(M))
        worst = max(worst, got - best)
    ok = worst <= 1e-12
    return CheckResult(
        4, "tidying optimality", "tidying attains the exhaustive minimal crossing sum", ok,
        f"max excess over exhaustive minimum = {worst:.2e}",
    )


@_timed
def check_norm_property(bounds=DEFAULT_BOUNDS, seed: int = 5) -> CheckResult:
    rng = np.random.default_rng(seed)
    smallest_pos = math.inf
    zero_fail = 0
    for n in (6, 8):
        for _ in range(50):
            M = random_second_moments(n, rng)
            smallest_pos = min(smallest_pos, c_bounds(M).c_minus)
        for _ in range(5):
            M = np.diag(rng.random(n))
            zero_fail += c_bounds(M).c_minus != 0.0
    ok = smallest_pos > 1e-12 and zero_fail == 0
    return CheckResult(
        5, "norm property", "minimal crossing sum vanishes exactly on diagonal matrices", ok,
        f"smallest positive-case value {smallest_pos:.3e}; {zero_fail} diagonal cases nonzero",
    )


@_timed
def check_closed_form(bounds=DEFAULT_BOUNDS, seed: int = 6) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(20):
        n = (6, 8)[t % 2]
        k = float(rng.choice([2.0, 4.0, 16.0]))
        da, db = random_mixture(n, rng), random_mixture(n, rng)
        Om = rng.normal(scale=1.0 / (n * k), size=(n, n))
        closed = gap_bilinear_closed(Om, da.moments(), k, db.moments()).value
        exh = gap_exhaustive(BilinearStrategy(Om, k), da, db, clamp=False).value
        worst = max(worst, abs(closed - exh) / abs(exh))
    ok = worst <= 1e-9
    return CheckResult(
        6, "closed form vs exhaustive", "bilinear closed-form gap equals exhaustive gap", ok,
        f"max relative difference {worst:.2e}",
    )


@_timed
def check_defeat(bounds=DEFAULT_BOUNDS, seed: int = 7, trials: int = 20) -> CheckResult:
    """Search defeating relabellings against fitted bilinear and exact oracle strategies."""
    rng = np.random.default_rng(seed)
    n, k = 8, 16.0
    mult = bounds["defeat_multiple"]
    hits = {"bilinear": 0, "oracle": 0}
    ratios = {"bilinear": [], "oracle": []}
    implication_ok = implication_seen = 0
    for _ in range(trials):
        phi = random_mixture(n, rng)
        q = phi.moments()
        bil = bilinear_fit(q, k)
        orc = oracle_fit(phi, phi, k)
        t = tidy(q)
        part = PartitionStrategy.from_tidying(t, t, k)
        pick = fresh_zeta(EngineConfig(n=n, k=k, seed=_seed(1, n)), rng)
        base = baselines(pick, pick, k).pair_gap
        target = mult * base
        out = search_bilinear(bil.Omega, pick.moments(), k, target, rng=rng, start=rng.permutation(n))
        moved = pick.permuted(out.sigma)
        g_bil = gap_exhaustive(bil, moved, moved).value
        # for the oracle, keep the best of the bilinear-found relabelling and 64 random ones
        cands = [out.sigma] + [rng.permutation(n) for _ in range(64)]
        g_orc = max(gap_exhaustive(orc, pick.permuted(s), pick.permuted(s)).value for s in cands)
        for name, g in (("bilinear", g_bil), ("oracle", g_orc)):
            ratios[name].append(g / base)
            hits[name] += g >= target
        if out.reached_target:
            implication_seen += 1
            implication_ok += gap_exhaustive(part, moved, moved).value >= target
    rate = {kk: v / trials for kk, v in hits.items()}
    ok = all(r >= 0.9 for r in rate.values())
    note = (
        f"restricted-form implication held {implication_ok}/{implication_seen}"
        if implication_seen
        else "restricted-form implication not exercised (bilinear target never reached)"
    )
    return CheckResult(
        7, "defeat property", f"search finds gap >= {mult:g} x pair gap in >= 90% of trials", ok,
        f"success bilinear {rate['bilinear']:.2f}, oracle {rate['oracle']:.2f}; "
        f"median gap/pair-gap bilinear {np.median(ratios['bilinear']):.3f}, "
        f"oracle {np.median(ratios['oracle']):.3f}; {note}",
        data={"rates": rate, "ratios": ratios},
    )


def period_fixture(n: int = 8) -> EngineConfig:
    """Deterministic single-track setup: the same pick every step, canonical relabelling."""
    return EngineConfig(n=n, k=16.0, method="partition", pick_mode="fixed", seed=_seed(11, n))


@_timed
def check_periods(bounds=DEFAULT_BOUNDS, steps: int = 500) -> CheckResult:
    fixture = period_fixture()
    st = run(fixture, 30, variant="algorithm1")
    period = detect_period(st.fingerprints, max_period=10)
    cfg = EngineConfig(n=8, seed=_seed(12, 8))
    alg2 = first_recurrence(run(cfg, steps, variant="algorithm2").fingerprints)
    comb_state = init(cfg)
    disp = []
    fps = [comb_state.fingerprints[-1]]
    for _ in range(steps):
        nxt = step(comb_state, cfg)
        disp.append(float(np.abs(nxt.phi.moments().M - comb_state.phi.moments().M).max()))
        fps.append(nxt.fingerprints[-1])
        comb_state = nxt
    comb = first_recurrence(fps)
    ok = period is not None and period <= 10 and alg2 is None and comb is None and min(disp) > 0
    return CheckResult(
        8, "period behaviour", "fast-only process cycles, averaged and combined processes do not", ok,
        f"fixture period {period}; slow-only recurrence {alg2}; combined recurrence {comb}; "
        f"min displacement {min(disp):.3e}",
    )


def average_gap_run(seed: int, n: int = 8, k: float = 16.0):
    """Combined run of ``ceil(2 n ln n)`` steps, then the average exact gap of a
    bilinear strategy refitted to the run's averaged moments."""
    cfg = EngineConfig(n=n, k=k, seed=_seed(seed, n), maturity_factor=2.0)
    steps = math.ceil(2 * n * math.log(n))
    history = []
    st = run(cfg, steps, on_step=lambda s: history.append(s.phi))
    adv = bilinear_fit(st.avg_moments, k)
    gaps = [gap_exhaustive(adv, phi, phi).value for phi in history]
    return cfg, st, float(np.mean(gaps))


def calibrate_kappa(seeds=CALIBRATION_SEEDS) -> float:
    """Smallest ``n * average gap`` across calibration runs."""
    return min(average_gap_run(s)[2] * 8 for s in seeds)


@_timed
def check_diagonal_sequence(bounds=DEFAULT_BOUNDS, seed: int = 9, rounds: int = 10**4) -> CheckResult:
    from .protocol import protocol_sim

    n = 8
    cfg, st, avg_gap = average_gap_run(seed, n)
    rep = protocol_sim(cfg, rounds, "bilinear")
    need_ratio = bounds["defeat_multiple"] / 2
    ok_gap = avg_gap >= KAPPA / n
    ok_ratio = rep.advantage_ratio >= need_ratio
    return CheckResult(
        9, "diagonal sequence (desk scale)", "refitted adversary keeps gap >= kappa/n; advantage ratio >= multiple/2",
        ok_gap and ok_ratio,
        f"n * avg gap = {avg_gap * n:.5f} (kappa {KAPPA}); advantage ratio "
        f"{rep.advantage_ratio:.3f} +- {rep.advantage_ratio_se:.3f} (need >= {need_ratio:g})",
        data={"avg_gap": avg_gap, "ratio": rep.advantage_ratio},
    )


@_timed
def check_complexity(bounds=DEFAULT_BOUNDS, repeats: int = 3) -> CheckResult:
    from .bench import bench, loglog_slope

    part = bench([64, 128, 256, 512, 1024], "partition", repeats=repeats)
    bil = bench([32, 64, 128, 256], "bilinear", repeats=repeats)
    sp = loglog_slope(part)
    sb = loglog_slope(bil)
    ok = abs(sb - 3.0) <= 0.5 and abs(sp - 2.0) <= 0.4
    return CheckResult(
        10, "complexity slopes", "bilinear exploration ~ n^3, partition ~ n^2", ok,
        f"bilinear slope {sb:.2f} (3 +- 0.5), partition slope {sp:.2f} (2 +- 0.4)",
        data={"bilinear": sb, "partition": sp},
    )


@_timed
def check_identities(bounds=DEFAULT_BOUNDS, seed: int = 11) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (2, 4, 6, 8, 10):
        V = bc.all_vectors(n)
        x = rng.random(n)
        chis = bc.chi(V, x)
        worst = max(worst, abs(math.fsum(chis) - 1.0))
        for _ in range(3):
            j = (rng.random(n) < 0.5).astype(np.int8)
            sup = np.all(V >= j, axis=1)
            worst = max(worst, abs(bc.pi_upper(j, x) - math.fsum(chis[sup])))
        worst = max(worst, abs(math.fsum(bc.psi_weight(x, l) for l in range(n + 1)) - 1.0))
    for n in (6, 8, 10):
        dist = random_pick(n, rng)
        sigma = rng.permutation(n)
        X, P = dist.permuted(sigma).support()
        direct = (X.T * P) @ X
        worst = max(worst, float(np.abs(direct - dist.moments().M[np.ix_(sigma, sigma)]).max()))
    ok = worst <= 1e-12
    return CheckResult(
        11, "identity suite", "normalisations, inclusion identity and moment conjugation", ok,
        f"max deviation {worst:.2e}",
    )


ALL_CHECKS = (
    check_pair_gap,
    check_oracle_efficiency,
    check_bilinear_bound,
    check_tidy_optimality,
    check_norm_property,
    check_closed_form,
    check_defeat,
    check_periods,
    check_diagonal_sequence,
    check_complexity,
    check_identities,
)
FAST_SKIP = {check_complexity.__name__, check_diagonal_sequence.__name__, check_oracle_efficiency.__name__}


def run_checks(level: str = "fast", bounds: dict | None = None, report=None) -> list[CheckResult]:
    if level not in ("fast", "full"):
        raise ValueError("level must be fast or full")
    bounds = {**DEFAULT_BOUNDS, **(bounds or {})}
    out = []
    for chk in ALL_CHECKS:
        if level == "fast" and chk.__name__ in FAST_SKIP:
            continue
        res = chk(bounds)
        out.append(res)
        if report is not None:
            report(res)
    return out
