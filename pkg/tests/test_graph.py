import random

import pytest
from hypothesis import given, settings, strategies as st

from graphtune.errors import ParseError, ValidationError
from graphtune.graph import (
    Graph,
    degree,
    from_edge_list,
    induced_subgraph,
    is_connected,
    relabel,
    to_edge_list,
)


def test_parse_basic():
    g = from_edge_list("0 1\n1 2")
    assert g == Graph(3, [(0, 1), (1, 2)])


def test_parse_dedup_reversed():
    g = from_edge_list("0 1\n1 0")
    assert g.n == 2 and g.edges == ((0, 1),)


def test_parse_self_loop():
    with pytest.raises(ValidationError):
        from_edge_list("5 5")


def test_parse_comments_and_renumbering():
    g = from_edge_list("# header\n10 7  # trailing\n\n7 003\n")
    # first appearance: 10 -> 0, 7 -> 1, 3 -> 2
    assert g == Graph(3, [(0, 1), (1, 2)])


@pytest.mark.parametrize("text,line", [("0 1\n1 x", 2), ("0 1 2", 1), ("-1 2", 1)])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(ParseError) as exc:
        from_edge_list(text)
    assert exc.value.line == line


def test_connectivity(triangle):
    assert is_connected(triangle)
    assert not is_connected(Graph(4, [(0, 1), (2, 3)]))
    assert is_connected(Graph(1))


def test_induced_subgraph(triangle):
    assert induced_subgraph(triangle, {0, 1}).edges == ((0, 1),)
    cycle = Graph(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    assert induced_subgraph(cycle, {0, 1, 2}) == Graph(3, [(0, 1), (1, 2)])
    assert induced_subgraph(cycle, range(4)) == cycle
    with pytest.raises(ValidationError):
        induced_subgraph(cycle, {7})


def test_degree(triangle):
    assert degree(triangle, 0) == 2
    assert degree(Graph(4, [(0, 1), (0, 2), (0, 3)]), 0) == 3
    assert degree(Graph(2), 1) == 0
    with pytest.raises(ValidationError):
        degree(triangle, 3)


def test_graph_rejects_bad_edges():
    with pytest.raises(ValidationError):
        Graph(2, [(0, 0)])
    with pytest.raises(ValidationError):
        Graph(2, [(0, 2)])


graphs = st.integers(2, 12).flatmap(
    lambda n: st.sets(
        st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda e: e[0] != e[1]),
        max_size=30,
    ).map(lambda es: Graph(n, es))
)


@given(graphs)
def test_handshake(g):
    assert sum(g.degrees()) == 2 * g.num_edges


@given(graphs)
def test_adjacency_consistent(g):
    for u in range(g.n):
        for v in g.adj[u]:
            assert u in g.adj[v]
            assert (min(u, v), max(u, v)) in g.edges


@given(graphs)
def test_reserialization_idempotent(g):
    covered = {x for e in g.edges for x in e}
    g2 = from_edge_list(to_edge_list(g))
    if covered == set(range(g.n)):
        assert g2 == g
    assert from_edge_list(to_edge_list(g2)) == g2


@settings(max_examples=30)
@given(graphs, st.randoms())
def test_induced_all_nodes_keeps_edges(g, rnd):
    assert induced_subgraph(g, range(g.n)).num_edges == g.num_edges
    perm = list(range(g.n))
    rnd.shuffle(perm)
    assert relabel(g, perm).num_edges == g.num_edges
