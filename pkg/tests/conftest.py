"""Shared fixtures and the acceptance-criteria summary section."""

import pytest

# (criterion number, passed, detail) tuples collected by test_acceptance.py
_criterion_lines = []


@pytest.fixture
def criterion_report():
    """Record a one-line verdict for an acceptance criterion.

    Returns a callable record(num, ok, detail).  The collected lines are
    printed as their own section at the end of the pytest run so the
    acceptance gate reads as one pass/fail line per criterion.
    """

    def record(num, ok, detail):
        _criterion_lines.append((num, bool(ok), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _criterion_lines:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(_criterion_lines):
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d}: {verdict}  ({detail})")
