"""One test per acceptance criterion, full profile at seed 0.

Set HOMFRAC_QUICK=1 for the reduced-budget profile.  Each criterion prints a
PASS/FAIL line; the lines are repeated in the terminal summary.
"""
import os

import pytest

from homfrac.acceptance import CRITERIA, Profile, run_criterion

from conftest import ACCEPTANCE_LINES

PROFILE = Profile(quick=os.environ.get("HOMFRAC_QUICK") == "1", seed=0)


@pytest.mark.parametrize("crit", CRITERIA, ids=[f"C{c.id:02d}-{c.name}" for c in CRITERIA])
def test_criterion(crit):
    res = run_criterion(crit, PROFILE)
    line = res.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert res.error is None, res.error
    assert res.passed, res.values
