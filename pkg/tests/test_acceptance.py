"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Tolerances live in :mod:`noiselock.acceptance` next to the measurement so the
``noiselock selftest`` command and this file report identical lines.
"""

import pytest

from noiselock.acceptance import CRITERIA

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.slow


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{c.number:02d}" for c in CRITERIA])
def test_criterion(criterion):
    res = criterion()
    line = res.line()
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert res.passed, line
