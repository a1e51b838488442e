"""Collects the acceptance verdicts and prints them once more at the end of
the run, so the PASS/FAIL lines appear in the terminal summary."""

import pytest

_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """``verdict(number, ok, detail)`` prints and records one line."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        _VERDICTS.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
