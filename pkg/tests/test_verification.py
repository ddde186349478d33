"""
Verification suite: every check passes at the default seed and reports are deterministic
"""

import inspect

import pytest

from ice.harness import verification
from ice.harness.verification import CheckResult, VerificationReport, run_verification


@pytest.fixture(scope="module")
def reduced_report():
    return run_verification(seed=0, full=False)


def test_all_checks_pass(reduced_report):
    failed = [c for c in reduced_report.checks if not c.passed]
    assert not failed, reduced_report.render()
    assert len(reduced_report.checks) == len(verification.CHECKS)


@pytest.mark.parametrize("check", [
    verification.check_expressivity,
    verification.check_convexity,
    verification.check_degenerate_latent,
    verification.check_binary_specialization,
])
def test_checks_are_deterministic(check):
    assert check(7, False) == check(7, False)


def test_report_rendering():
    report = VerificationReport(3, False, [CheckResult("a", True, "ok"), CheckResult("b", False, "bad")])
    assert not report.passed
    assert report.render() == "verify seed=3 mode=reduced\nPASS a: ok\nFAIL b: bad\n1/2 checks passed\n"


def test_report_has_no_timings(reduced_report):
    text = reduced_report.render()
    assert " s)" not in text and "sec" not in text


@pytest.mark.slow
def test_full_suite():
    report = run_verification(seed=0, full=True)
    assert report.passed, report.render()


def test_gradient_check_uses_stable_step():
    assert inspect.signature(verification.finite_difference_gradient).parameters["step"].default == 1e-5
    result = verification.check_gradient(0, False)
    assert result.passed, result.detail
