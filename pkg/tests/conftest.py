"""Collects the acceptance verdicts and prints one line per criterion at the end of the run."""

import pytest

VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    def record(number: int, ok: bool, detail: str) -> bool:
        VERDICTS[number] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        ok, detail = VERDICTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
