import random

import networkx as nx
import pytest

from graphtune.graph import Graph, from_networkx


def random_connected_graph(rng: random.Random, n: int, extra: float = 0.15) -> Graph:
    """Random spanning tree plus each remaining pair with probability ``extra``."""
    nodes = list(range(n))
    rng.shuffle(nodes)
    edges = set()
    for i in range(1, n):
        u, v = nodes[i], nodes[rng.randrange(i)]
        edges.add((min(u, v), max(u, v)))
    for u in range(n):
        for v in range(u + 1, n):
            if (u, v) not in edges and rng.random() < extra:
                edges.add((u, v))
    return Graph(n, edges)


def isomorphic(a: Graph, b: Graph) -> bool:
    return a.n == b.n and a.num_edges == b.num_edges and nx.is_isomorphic(a.to_networkx(), b.to_networkx())


def small_connected_graphs(max_edges: int = 6):
    """Every connected graph with 1..max_edges edges, up to isomorphism."""
    out = []
    for h in nx.graph_atlas_g():
        if h.number_of_nodes() >= 2 and 1 <= h.number_of_edges() <= max_edges and nx.is_connected(h):
            out.append(from_networkx(h))
    return out


@pytest.fixture
def triangle():
    return Graph(3, [(0, 1), (1, 2), (0, 2)])


# criterion number -> (passed, detail); filled by test_acceptance and echoed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(criterion: int, passed: bool, detail: str) -> str:
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE[criterion] = (passed, detail)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'} ({detail})")
