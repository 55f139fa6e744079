"""Acceptance gate: every check prints one PASS/FAIL line with its evidence.

The same checks back the `modfx selftest` subcommand; see modfx.selfcheck
for what each one verifies and at which tolerance.
"""

import pytest

from modfx import selfcheck


@pytest.mark.parametrize("name", selfcheck.CHECK_NAMES)
def test_acceptance(name):
    result = selfcheck.CHECKS[name]()
    status = "PASS" if result.passed else "FAIL"
    print(f"\n{status} {name} ({result.seconds:.1f}s): {result.detail}")
    assert result.passed, result.detail
