"""Shared fixtures and the acceptance summary printed at the end of a run."""

import pytest

ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance outcome: ``criterion(n, title, passed, detail)``."""

    def record(n: int, title: str, passed: bool, detail: str = "") -> bool:
        ACCEPTANCE[n] = (bool(passed), title, detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {title}: {detail}")
