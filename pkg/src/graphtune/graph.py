"""Immutable undirected simple graphs and the edge-list text format."""

from __future__ import annotations

from collections import deque
from typing import Iterable

from .errors import ParseError, ValidationError


class Graph:
    """Undirected simple graph on nodes ``0..n-1``.

    Edges are stored as sorted ``(u, v)`` pairs with ``u < v``. Instances are
    immutable and hashable, so they can be shared between threads freely.
    """

    __slots__ = ("_n", "_edges", "_adj")

    def __init__(self, n: int, edges: Iterable[tuple[int, int]] = ()):
        if n < 0:
            raise ValidationError(f"node count must be nonnegative, got {n}")
        canon = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValidationError(f"self-loop on node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ValidationError(f"edge ({u}, {v}) out of range for n={n}")
            canon.add((u, v) if u < v else (v, u))
        adj: list[list[int]] = [[] for _ in range(n)]
        for u, v in canon:
            adj[u].append(v)
            adj[v].append(u)
        self._n = n
        self._edges = tuple(sorted(canon))
        self._adj = tuple(tuple(sorted(a)) for a in adj)

    @property
    def n(self) -> int:
        return self._n

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return self._edges

    @property
    def adj(self) -> tuple[tuple[int, ...], ...]:
        return self._adj

    @property
    def num_edges(self) -> int:
        return len(self._edges)

    def has_edge(self, u: int, v: int) -> bool:
        a = self._adj[u]
        # adjacency lists are short; bisect is not worth it here
        return v in a

    def degrees(self) -> list[int]:
        return [len(a) for a in self._adj]

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return self._n == other._n and self._edges == other._edges

    def __hash__(self):
        return hash((self._n, self._edges))

    def __repr__(self):
        return f"Graph(n={self._n}, edges={list(self._edges)})"

    def to_networkx(self):
        import networkx as nx

        g = nx.Graph()
        g.add_nodes_from(range(self._n))
        g.add_edges_from(self._edges)
        return g


def from_edge_list(text: str) -> Graph:
    """Parse edge-list text (one ``u v`` pair per line, ``#`` comments).

    Ids that already form the dense range ``0..n-1`` are kept; otherwise nodes
    are renumbered in order of first appearance.
    """
    pairs = []
    order: dict[int, None] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected two node ids, got {raw!r}", lineno)
        try:
            u, v = int(parts[0], 10), int(parts[1], 10)
        except ValueError:
            raise ParseError(f"non-integer node id in {raw!r}", lineno) from None
        if u < 0 or v < 0:
            raise ParseError(f"negative node id in {raw!r}", lineno)
        if u == v:
            raise ValidationError(f"line {lineno}: self-loop on node {u}")
        order.setdefault(u)
        order.setdefault(v)
        pairs.append((u, v))
    ids = list(order)
    n = len(ids)
    if set(ids) == set(range(n)):
        return Graph(n, pairs)
    remap = {old: new for new, old in enumerate(ids)}
    return Graph(n, ((remap[u], remap[v]) for u, v in pairs))


def to_edge_list(g: Graph) -> str:
    return "".join(f"{u} {v}\n" for u, v in g.edges)


def read_edge_list(path) -> Graph:
    with open(path, encoding="utf-8") as fh:
        return from_edge_list(fh.read())


def write_edge_list(g: Graph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(to_edge_list(g))


def bfs_distances(g: Graph, source: int) -> list[int]:
    """Hop distances from ``source``; unreachable nodes get -1."""
    dist = [-1] * g.n
    dist[source] = 0
    queue = deque([source])
    adj = g.adj
    while queue:
        u = queue.popleft()
        du = dist[u] + 1
        for w in adj[u]:
            if dist[w] < 0:
                dist[w] = du
                queue.append(w)
    return dist


def is_connected(g: Graph) -> bool:
    if g.n == 0:
        return False
    return min(bfs_distances(g, 0)) >= 0


def connected_components(g: Graph) -> list[list[int]]:
    seen = [False] * g.n
    comps = []
    for s in range(g.n):
        if seen[s]:
            continue
        comp = [s]
        seen[s] = True
        stack = [s]
        while stack:
            u = stack.pop()
            for w in g.adj[u]:
                if not seen[w]:
                    seen[w] = True
                    comp.append(w)
                    stack.append(w)
        comps.append(sorted(comp))
    return comps


def induced_subgraph(g: Graph, nodes: Iterable[int]) -> Graph:
    """Subgraph on ``nodes`` (renumbered in ascending id order) with every edge of ``g`` between them."""
    keep = sorted(set(nodes))
    for v in keep:
        if not 0 <= v < g.n:
            raise ValidationError(f"node {v} out of range for n={g.n}")
    index = {v: i for i, v in enumerate(keep)}
    sub_edges = [(index[u], index[v]) for u, v in g.edges if u in index and v in index]
    return Graph(len(keep), sub_edges)


def largest_component(g: Graph) -> Graph:
    comps = connected_components(g)
    return induced_subgraph(g, max(comps, key=len))


def degree(g: Graph, v: int) -> int:
    if not 0 <= v < g.n:
        raise ValidationError(f"node {v} out of range for n={g.n}")
    return len(g.adj[v])


def from_networkx(nxg) -> Graph:
    nodes = list(nxg.nodes())
    index = {v: i for i, v in enumerate(nodes)}
    return Graph(len(nodes), ((index[u], index[v]) for u, v in nxg.edges()))


def relabel(g: Graph, perm) -> Graph:
    """Apply the node permutation ``old -> perm[old]``."""
    return Graph(g.n, ((perm[u], perm[v]) for u, v in g.edges))
