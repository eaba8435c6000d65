"""Global structural features of graphs and condition vectors built from them."""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable

import numpy as np
from scipy import optimize, special

from .errors import UndefinedFeatureError, ValidationError
from .dfscode import decode, encode_min_dfs
from .graph import Graph, bfs_distances, connected_components, is_connected, largest_component

FEATURE_NAMES = ("aspl", "avg_degree", "modularity", "clustering", "plaw")


def avg_shortest_path_length(g: Graph) -> float:
    if g.n < 2:
        raise UndefinedFeatureError("average shortest path length needs at least 2 nodes")
    total = 0
    for s in range(g.n):
        dist = bfs_distances(g, s)
        if min(dist) < 0:
            raise UndefinedFeatureError("graph is disconnected")
        total += sum(dist)
    return total / (g.n * (g.n - 1))


def average_degree(g: Graph) -> float:
    if g.n < 1:
        raise UndefinedFeatureError("empty graph")
    return 2.0 * g.num_edges / g.n


def edge_density(g: Graph) -> float:
    if g.n < 2:
        raise UndefinedFeatureError("edge density needs at least 2 nodes")
    return 2.0 * g.num_edges / (g.n * (g.n - 1))


def clustering_coefficient(g: Graph) -> float:
    """Mean local clustering; nodes of degree < 2 count as 0."""
    if g.n < 1:
        raise UndefinedFeatureError("empty graph")
    nbsets = [set(a) for a in g.adj]
    total = 0.0
    for v, nb in enumerate(g.adj):
        k = len(nb)
        if k < 2:
            continue
        links = sum(len(nbsets[u] & nbsets[v]) for u in nb) / 2
        total += links / (k * (k - 1) / 2)
    return total / g.n


# ------------------------------------------------------------------ modularity


def modularity(g: Graph, partition) -> float:
    """Newman modularity of ``partition`` (node -> community id)."""
    m = g.num_edges
    if m == 0:
        raise UndefinedFeatureError("modularity is undefined without edges")
    intra: dict = {}
    deg: dict = {}
    for u, v in g.edges:
        if partition[u] == partition[v]:
            intra[partition[u]] = intra.get(partition[u], 0) + 1
    for v in range(g.n):
        deg[partition[v]] = deg.get(partition[v], 0) + len(g.adj[v])
    return sum(intra.get(c, 0) / m - (d / (2 * m)) ** 2 for c, d in deg.items())


def _one_level(adj, strength, two_m, rng, start=None):
    """Greedy local moves on a weighted graph; returns node -> community."""
    nodes = list(adj)
    comm = {v: v for v in nodes} if start is None else dict(start)
    tot: dict = {}
    for v in nodes:
        tot[comm[v]] = tot.get(comm[v], 0.0) + strength[v]
    improved_any = False
    while True:
        moved = False
        rng.shuffle(nodes)
        for v in nodes:
            cv = comm[v]
            kv = strength[v]
            links: dict = {}
            for w, wt in adj[v].items():
                if w != v:
                    links[comm[w]] = links.get(comm[w], 0.0) + wt
            tot[cv] -= kv
            best_c = cv
            best_gain = links.get(cv, 0.0) - tot[cv] * kv / two_m
            for c, k_in in links.items():
                gain = k_in - tot.get(c, 0.0) * kv / two_m
                if gain > best_gain + 1e-12:
                    best_c, best_gain = c, gain
            tot[best_c] = tot.get(best_c, 0.0) + kv
            if best_c != cv:
                comm[v] = best_c
                moved = True
                improved_any = True
        if not moved:
            return comm, improved_any


def louvain(g: Graph, seed: int = 0, refine: bool = True) -> list[int]:
    """Louvain community detection; returns community ids indexed by node.

    With ``refine`` the aggregated result is polished by one more round of
    single-node moves on the original graph.
    """
    if g.num_edges == 0:
        raise UndefinedFeatureError("Louvain needs at least one edge")
    rng = random.Random(seed)
    adj: dict = {v: {} for v in range(g.n)}
    for u, v in g.edges:
        adj[u][v] = 1.0
        adj[v][u] = 1.0
    base = adj
    membership = list(range(g.n))
    two_m = 2.0 * g.num_edges
    while True:
        # a self-loop entry holds the community's internal degree
        strength = {v: sum(nb.values()) for v, nb in adj.items()}
        comm, improved = _one_level(adj, strength, two_m, rng)
        if not improved:
            break
        labels = {c: i for i, c in enumerate(sorted(set(comm.values())))}
        membership = [labels[comm[c]] for c in membership]
        new_adj: dict = {i: {} for i in range(len(labels))}
        for v, nb in adj.items():
            cv = labels[comm[v]]
            for w, wt in nb.items():
                cw = labels[comm[w]]
                new_adj[cv][cw] = new_adj[cv].get(cw, 0.0) + wt
        adj = new_adj
        if len(adj) == 1:
            break
    if refine:
        strength = {v: float(len(g.adj[v])) for v in range(g.n)}
        comm, _ = _one_level(base, strength, two_m, rng, start=dict(enumerate(membership)))
        labels = {c: i for i, c in enumerate(sorted(set(comm.values())))}
        membership = [labels[comm[v]] for v in range(g.n)]
    return membership


def modularity_louvain(g: Graph, seed: int = 0, restarts: int = 20) -> tuple[list[int], float]:
    """Best partition over ``restarts`` seeded Louvain runs and its modularity.

    Connected graphs are first relabelled by their minimum DFS code so the
    result does not depend on the input node numbering.
    """
    if g.num_edges == 0:
        raise UndefinedFeatureError("Louvain needs at least one edge")
    order = None
    work = g
    if g.n >= 2 and is_connected(g):
        code, order = encode_min_dfs(g, return_order=True)
        work = decode(code)
    best_part, best_q = None, -math.inf
    for k in range(max(1, restarts)):
        part = louvain(work, seed=seed * 7919 + k)
        q = modularity(work, part)
        if q > best_q + 1e-12:
            best_part, best_q = part, q
    if order is not None:
        mapped = [0] * g.n
        for t, v in enumerate(order):
            mapped[v] = best_part[t]
        best_part = mapped
    return best_part, best_q


# ------------------------------------------------------------------ power law


@dataclass(frozen=True)
class PowerLawFit:
    alpha: float
    xmin: int
    ks: float
    n_tail: int


def _discrete_mle(tail: np.ndarray, xmin: int) -> float:
    n = len(tail)
    sum_log = float(np.log(tail).sum())

    def nll(a):
        return a * sum_log + n * math.log(special.zeta(a, xmin))

    # the continuous approximation brackets the optimum well
    guess = 1.0 + n / float(np.log(tail / (xmin - 0.5)).sum())
    hi = max(guess * 2.0, 6.0)
    res = optimize.minimize_scalar(nll, bounds=(1.0 + 1e-6, hi), method="bounded", options={"xatol": 1e-10})
    return float(res.x)


def _ks_distance(tail: np.ndarray, xmin: int, alpha: float) -> float:
    values, counts = np.unique(tail, return_counts=True)
    emp_cdf = np.cumsum(counts) / len(tail)
    emp_before = emp_cdf - counts / len(tail)
    model_cdf = 1.0 - special.zeta(alpha, values + 1.0) / special.zeta(alpha, xmin)
    model_before = 1.0 - special.zeta(alpha, values.astype(float)) / special.zeta(alpha, xmin)
    return float(max(np.abs(emp_cdf - model_cdf).max(), np.abs(emp_before - model_before).max()))


def fit_power_law(data) -> PowerLawFit:
    """Discrete power-law MLE with ``xmin`` chosen by minimum KS distance.

    Candidate ``xmin`` values are the distinct positive data values whose tail
    still has at least two distinct values; ties in KS distance keep the
    smaller ``xmin``.
    """
    x = np.sort(np.asarray([v for v in data if v >= 1], dtype=float))
    if len(x) < 2:
        raise UndefinedFeatureError("power-law fit needs at least two positive values")
    best = None
    for xmin in np.unique(x):
        tail = x[x >= xmin]
        if len(np.unique(tail)) < 2:
            continue
        alpha = _discrete_mle(tail, int(xmin))
        ks = _ks_distance(tail, int(xmin), alpha)
        if best is None or ks < best.ks:
            best = PowerLawFit(alpha, int(xmin), ks, len(tail))
    if best is None:
        raise UndefinedFeatureError("degenerate degree sequence (all values equal)")
    return best


def power_law_exponent(g: Graph) -> float:
    return fit_power_law(g.degrees()).alpha


# ------------------------------------------------------------------ dispatch


def _modularity_value(g: Graph) -> float:
    return modularity_louvain(g)[1]


FEATURES: dict[str, Callable[[Graph], float]] = {
    "aspl": avg_shortest_path_length,
    "avg_degree": average_degree,
    "modularity": _modularity_value,
    "clustering": clustering_coefficient,
    "plaw": power_law_exponent,
    "density": edge_density,
}


def compute_feature(g: Graph, name: str) -> float:
    try:
        fn = FEATURES[name]
    except KeyError:
        raise ValidationError(f"unknown feature {name!r}; choose from {sorted(FEATURES)}") from None
    return fn(g)


def feature_vector(g: Graph, names=FEATURE_NAMES, largest_component_aspl: bool = False) -> dict:
    """All requested features; undefined ones map to ``None``.

    With ``largest_component_aspl`` a disconnected graph also gets an
    ``aspl_lcc`` entry measured on its largest component.
    """
    out = {}
    for name in names:
        try:
            out[name] = compute_feature(g, name)
        except UndefinedFeatureError:
            out[name] = None
    if largest_component_aspl and "aspl" in names:
        if out.get("aspl") is None and g.n >= 2 and len(connected_components(g)) > 1:
            lcc = largest_component(g)
            out["aspl_lcc"] = avg_shortest_path_length(lcc) if lcc.n >= 2 else None
        else:
            out["aspl_lcc"] = out.get("aspl")
    return out


# ------------------------------------------------------------------ conditions


def round_half_up(value: float, places: int) -> float:
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(float(value))).quantize(q, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class ConditionVector:
    value: float
    dim: int
    rounding: int | None = None

    def as_array(self) -> np.ndarray:
        return np.full(self.dim, self.value, dtype=np.float64)


def build_condition_vector(value: float, dim: int, round_places: int | None = 1) -> ConditionVector:
    if dim < 1:
        raise ValidationError(f"condition dim must be >= 1, got {dim}")
    if round_places is not None:
        value = round_half_up(value, round_places)
    return ConditionVector(float(value), int(dim), round_places)


def write_feature_table(rows, path, columns=("graph_id",) + FEATURE_NAMES, extra=()) -> None:
    cols = list(extra) + list(columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow(["" if row.get(c) is None else row.get(c) for c in cols])


def is_feature_defined(g: Graph, name: str) -> bool:
    try:
        compute_feature(g, name)
    except UndefinedFeatureError:
        return False
    return True


__all__ = [
    "ConditionVector",
    "FEATURES",
    "FEATURE_NAMES",
    "PowerLawFit",
    "avg_shortest_path_length",
    "average_degree",
    "build_condition_vector",
    "clustering_coefficient",
    "compute_feature",
    "edge_density",
    "feature_vector",
    "fit_power_law",
    "is_connected",
    "louvain",
    "modularity",
    "modularity_louvain",
    "power_law_exponent",
    "round_half_up",
]
