"""Shared pytest hooks: collects acceptance verdicts and prints them at the end."""
import pytest

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """Record one acceptance line; call as ``verdict(k, passed, detail)``."""
    def record(k, passed, detail):
        ACCEPTANCE[k] = (bool(passed), detail)
        print(f"\ncriterion {k}: {'PASS' if passed else 'FAIL'} - {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")
