import numpy as np
import pytest

_KEY = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.stash[_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one acceptance verdict; lines are echoed in the terminal summary."""
    lines = request.config.stash[_KEY]

    def record(number: int, title: str, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title}" + (f"  [{detail}]" if detail else "")
        lines.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
