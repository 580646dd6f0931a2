from __future__ import annotations

import pytest

# criterion number -> list of (passed, detail) gathered by the acceptance tests
_RESULTS: dict = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    _RESULTS.setdefault(criterion, []).append((bool(passed), detail))


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_RESULTS):
        parts = _RESULTS[criterion]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")
