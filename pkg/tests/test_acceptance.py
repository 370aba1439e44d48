"""The eleven acceptance criteria, each at its stated tolerance.

Every check prints one PASS/FAIL line, collected again in the terminal
summary, and then asserts its verdict.
"""

import pytest

from drg import checks
from drg.checks import DEFAULT_BOUNDS


def _run(check, log):
    res = check(DEFAULT_BOUNDS)
    log.append((res.number, res.line()))
    print(res.line())
    assert res.passed, res.line()


def test_01_pair_gap_bound(acceptance_log):
    _run(checks.check_pair_gap, acceptance_log)


@pytest.mark.slow
def test_02_oracle_efficiency(acceptance_log):
    _run(checks.check_oracle_efficiency, acceptance_log)


def test_03_bilinear_bound(acceptance_log):
    _run(checks.check_bilinear_bound, acceptance_log)


def test_04_tidy_optimality(acceptance_log):
    _run(checks.check_tidy_optimality, acceptance_log)


def test_05_norm_property(acceptance_log):
    _run(checks.check_norm_property, acceptance_log)


def test_06_closed_form(acceptance_log):
    _run(checks.check_closed_form, acceptance_log)


def test_07_defeat_property(acceptance_log):
    _run(checks.check_defeat, acceptance_log)


def test_08_period_behaviour(acceptance_log):
    _run(checks.check_periods, acceptance_log)


@pytest.mark.slow
def test_09_diagonal_sequence(acceptance_log):
    _run(checks.check_diagonal_sequence, acceptance_log)


@pytest.mark.slow
def test_10_complexity_slopes(acceptance_log):
    _run(checks.check_complexity, acceptance_log)


def test_11_identity_suite(acceptance_log):
    _run(checks.check_identities, acceptance_log)
