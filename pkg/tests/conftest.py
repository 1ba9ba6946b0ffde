import pytest

from relalloc import BetaParams, ComponentCounts, SystemSpec, Topology

ACCEPTANCE_LINES = []

UNIFORM = BetaParams(1, 1)


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion and assert it."""

    def record(criterion, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def uniform_pair():
    return SystemSpec.parallel([UNIFORM, UNIFORM])


@pytest.fixture
def two_by_one():
    return SystemSpec(Topology.PARALLEL_SERIES, ((UNIFORM,), (UNIFORM,)))


def counts(*pairs):
    return [ComponentCounts(t, s) for t, s in pairs]
