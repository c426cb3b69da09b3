"""Acceptance criteria, one test each.

Every test prints a single [PASS]/[FAIL] line with the measured values and
thresholds. The lines are repeated in the terminal summary, so they show up
without -s as well. Heavy runs are shared through the cached fixtures in
koiter_fsi.checks.
"""
import pytest

from koiter_fsi import checks

NAMES = [n for n, _ in checks.select("acceptance")]


@pytest.mark.parametrize("name", NAMES)
def test_acceptance(name, acceptance_log):
    (res,) = checks.run_checks(name)
    print(res.line())
    acceptance_log.append(res.line())
    assert res.passed, res.line()


def test_all_twelve_registered():
    assert len(NAMES) == 12
