from statistics import NormalDist

import numpy as np

from drg.checks import random_mixture, random_pick, random_second_moments

__all__ = ["family_z", "random_lgrid", "random_mixture", "random_pick", "random_second_moments"]
from drg.distribution import LGridDistribution
from drg.engine import random_table


def random_lgrid(n: int, rng: np.random.Generator) -> LGridDistribution:
    """Unconstrained L-grid with a uniform relabelling (no acceptance test)."""
    return LGridDistribution(random_table(n // 2, rng), rng.permutation(n))


def family_z(cells: int, sigmas: float = 3.0) -> float:
    """Per-cell |z| threshold keeping a ``sigmas``-level two-sided test family-wise over ``cells`` cells."""
    p = 2 * (1 - NormalDist().cdf(sigmas))
    return NormalDist().inv_cdf(1 - p / (2 * cells))
