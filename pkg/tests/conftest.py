import numpy as np
import pytest

from hatgae.graph import Graph

ACCEPTANCE_RESULTS = []


@pytest.fixture
def record_criterion():
    """Collect one pass/fail line per acceptance criterion for the terminal summary."""

    def _record(name, passed, detail=""):
        ACCEPTANCE_RESULTS.append((name, bool(passed), detail))

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def directed3():
    """Edges 0->1, 0->2, 1->2 with the 3x2 feature matrix used in the hand examples."""
    return Graph.from_edges(3, [(0, 1), (0, 2), (1, 2)], [[1, 0], [0, 1], [1, 1]], directed=True)


@pytest.fixture
def cycle3():
    return Graph.from_edges(3, [(0, 1), (1, 2), (2, 0)], np.eye(3), directed=True)


@pytest.fixture
def triangle():
    return Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)], np.eye(3))


def random_graph(rng, n, p, n_dims=4, directed=False):
    a = rng.random((n, n)) < p
    np.fill_diagonal(a, False)
    if not directed:
        a = np.triu(a)
    edges = np.argwhere(a)
    return Graph.from_edges(n, edges, rng.normal(size=(n, n_dims)), directed=directed)


@pytest.fixture
def small_graph():
    """12-node undirected graph with F=8 (used by gradient checks)."""
    rng = np.random.default_rng(12)
    return random_graph(rng, 12, 0.3, n_dims=8)
