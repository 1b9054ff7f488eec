import numpy as np
import pytest

from dmsg.graph import GrowingGraphSource, save_graph


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def path_graph_dir(tmp_path):
    """3-node path 0-1-2, two classes, two features."""
    src = GrowingGraphSource(np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]]),
                             np.array([0, 0, 1]), np.array([[0, 1], [1, 2]]))
    return save_graph(src, tmp_path / "path")


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""
    def record(number, name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {name}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE.append((number, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
