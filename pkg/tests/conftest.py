from __future__ import annotations

import pytest

from abreu_forge.bundle import roots_from_pairs
from abreu_forge.polytope import box, interval, simplex


@pytest.fixture
def unit_interval():
    return interval(0, 1)


@pytest.fixture
def square():
    return box(2)


@pytest.fixture
def triangle():
    return simplex(2)


@pytest.fixture
def shifted_line():
    """[3, 4] with the single root M = (1): D = 2 xi."""
    return interval(3, 4), roots_from_pairs([((1,), 1)])


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion."""

    def record(k: int, ok: bool, detail: str) -> None:
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail}"
        _CRITERIA.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
