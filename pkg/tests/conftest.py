"""Collects acceptance verdicts and prints them after the test session."""

import pytest

ACCEPTANCE: dict = {}


@pytest.fixture
def record():
    def _record(number: int, passed: bool, detail: str, seconds: float):
        ACCEPTANCE[number] = (bool(passed), detail, seconds)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({seconds:.1f} s) {detail}")
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail, secs = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({secs:.1f} s) {detail}")
