"""Wall-time measurements of one fit plus one defeating search per method."""

from __future__ import annotations

import math
import time

import numpy as np

from .distribution import LGridDistribution, MixtureDistribution, identity
from .engine import fit_partition, random_table
from .search import search_bilinear, search_partition
from .strategy import bilinear_fit

CSV_HEADER = "n,method,fit_ms,search_ms,total_ms"


def _instance(n: int, rng: np.random.Generator):
    h = n // 2
    phi = MixtureDistribution.of(
        [(0.5, LGridDistribution(random_table(h, rng), rng.permutation(n))) for _ in range(2)]
    )
    pick = LGridDistribution(random_table(h, rng), identity(n))
    return phi, pick


def time_once(n: int, method: str, k: float, rng: np.random.Generator) -> tuple[float, float]:
    phi, pick = _instance(n, rng)
    if method == "partition":
        t0 = time.perf_counter()
        strat = fit_partition(phi.moments(), k)
        t1 = time.perf_counter()
        search_partition(pick.block_moments(), strat.sigma_a, math.inf, k, rng=rng)
        t2 = time.perf_counter()
    elif method == "bilinear":
        t0 = time.perf_counter()
        strat = bilinear_fit(phi.moments(), k)
        t1 = time.perf_counter()
        search_bilinear(strat.Omega, pick.moments(), k, math.inf, rng=rng, start=rng.permutation(n), restarts=0)
        t2 = time.perf_counter()
    else:
        raise ValueError(f"unknown method {method!r}")
    return 1e3 * (t1 - t0), 1e3 * (t2 - t1)


def bench(sizes, method: str, k: float = 16.0, repeats: int = 3, seed: int = 0) -> list[dict]:
    """Per-size timings (best of ``repeats``), as dict rows of the CSV."""
    rows = []
    for n in sizes:
        if n < 6 or n % 2:
            raise ValueError(f"sizes must be even and >= 6, got {n}")
        rng = np.random.default_rng([seed, n])
        time_once(n, method, k, rng)  # warm-up, not recorded
        best = None
        for _ in range(repeats):
            fit_ms, search_ms = time_once(n, method, k, rng)
            if best is None or fit_ms + search_ms < sum(best):
                best = (fit_ms, search_ms)
        rows.append({"n": n, "method": method, "fit_ms": best[0], "search_ms": best[1], "total_ms": sum(best)})
    return rows


def loglog_slope(rows: list[dict]) -> float:
    x = np.log([r["n"] for r in rows])
    y = np.log([r["total_ms"] for r in rows])
    return float(np.polyfit(x, y, 1)[0])


def to_csv(rows: list[dict]) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(f"{r['n']},{r['method']},{r['fit_ms']:.3f},{r['search_ms']:.3f},{r['total_ms']:.3f}")
    return "\n".join(lines) + "\n"
