"""Acceptance criteria 1-11 at their stated tolerances.

Each test records one PASS/FAIL line, printed together in the
"acceptance criteria" section of the pytest summary. Thresholds live in
``daclab.acceptance`` and are shared with ``daclab verify``.
"""

import pytest

from conftest import ACCEPTANCE_LINES
from daclab import acceptance


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(acceptance.CHECKS))
def test_criterion(number):
    res = acceptance.CHECKS[number](seed=0)
    print(res.line())
    ACCEPTANCE_LINES.append(res.line())
    assert res.passed, res.line()
