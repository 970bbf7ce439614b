import numpy as np
import pytest

from ranrc.graph import DirectedGraph

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def toy_emails():
    """Five emails, two features, labels in {-1, +1}."""
    X = np.array([[0.1, 1.2], [0.0, 0.3], [2.0, 0.0], [0.5, 0.5], [1.5, 2.5]])
    y = np.array([1.0, -1.0, 1.0, -1.0, -1.0])
    return X, y


@pytest.fixture
def ring3():
    return DirectedGraph.from_edges(3, [(0, 1), (1, 2), (2, 0)])


@pytest.fixture
def pair():
    return DirectedGraph.from_edges(2, [(0, 1), (1, 0)])


@pytest.fixture
def star3():
    """Node 0 talks to 1 and 2, both answer back."""
    return DirectedGraph.from_edges(3, [(0, 1), (0, 2), (1, 0), (2, 0)])
