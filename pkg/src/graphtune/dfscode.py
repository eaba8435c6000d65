"""Minimum DFS codes, their one-hot encoding, and reconstruction.

A DFS code lists every edge of a connected graph as a 5-tuple
``(t_u, t_v, l_u, l_e, l_v)`` where ``t`` are depth-first discovery
timestamps. Backward edges out of a freshly discovered node are emitted right
after the forward edge that discovered it, in ascending order of the far
timestamp. The canonical code is the minimum under the gSpan DFS
lexicographic order, found here by extending all tied partial embeddings one
edge at a time.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cmp_to_key
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import (
    EmptyGenerationError,
    ValidationError,
    VocabularyOverflowError,
)
from .graph import Graph, is_connected


class FiveTuple(NamedTuple):
    t_u: int
    t_v: int
    l_u: int
    l_e: int
    l_v: int

    @property
    def is_forward(self) -> bool:
        return self.t_u < self.t_v


DfsCode = list  # list[FiveTuple]


def _default_labels(g: Graph, labeler, edge_labeler):
    if labeler is None:
        labels = g.degrees()
    else:
        labels = [labeler(v) for v in range(g.n)]
    if edge_labeler is None:
        elab = None
    else:
        elab = {e: edge_labeler(e) for e in g.edges}
    return labels, elab


def _edge_label(elab, u, v):
    if elab is None:
        return 0
    return elab[(u, v) if u < v else (v, u)]


# ---------------------------------------------------------------- ordering


def _edge_cmp(a: Sequence[int], b: Sequence[int]) -> int:
    """gSpan order on two 5-tuples; timestamps decide, labels break ties."""
    ia, ja = a[0], a[1]
    ib, jb = b[0], b[1]
    if (ia, ja) != (ib, jb):
        fa, fb = ia < ja, ib < jb
        if fa and fb:
            less = ja < jb or (ja == jb and ia > ib)
        elif not fa and not fb:
            less = ia < ib or (ia == ib and ja < jb)
        elif not fa and fb:
            less = ia < jb
        else:
            less = ja <= ib
        return -1 if less else 1
    la, lb = tuple(a[2:]), tuple(b[2:])
    if la == lb:
        return 0
    return -1 if la < lb else 1


def dfs_code_compare(a: Sequence, b: Sequence) -> int:
    """Three-way comparison (-1, 0, 1) of two DFS codes."""
    for x, y in zip(a, b):
        c = _edge_cmp(x, y)
        if c:
            return c
    return (len(a) > len(b)) - (len(a) < len(b))


dfs_code_key = cmp_to_key(dfs_code_compare)


# ---------------------------------------------------------------- encoding


def code_from_traversal(
    g: Graph,
    forward_edges: Sequence[tuple[int, int]],
    labeler: Callable[[int], int] | None = None,
    edge_labeler: Callable[[tuple[int, int]], int] | None = None,
) -> DfsCode:
    """DFS code for an explicit traversal given as its forward edges in order."""
    labels, elab = _default_labels(g, labeler, edge_labeler)
    if not forward_edges:
        raise ValidationError("traversal has no edges")
    ts = {forward_edges[0][0]: 0}
    code = []
    for w, u in forward_edges:
        if w not in ts or u in ts:
            raise ValidationError(f"({w}, {u}) is not a forward edge of the traversal")
        if not g.has_edge(w, u):
            raise ValidationError(f"({w}, {u}) is not an edge")
        ts[u] = len(ts)
        code.append(FiveTuple(ts[w], ts[u], labels[w], _edge_label(elab, w, u), labels[u]))
        back = sorted(ts[x] for x in g.adj[u] if x in ts and x != w)
        by_ts = {t: x for x, t in ts.items()}
        for t in back:
            x = by_ts[t]
            code.append(FiveTuple(ts[u], t, labels[u], _edge_label(elab, u, x), labels[x]))
    if len(code) != g.num_edges:
        raise ValidationError("traversal does not cover every edge")
    return code


def _twin_keys(g: Graph, labels):
    open_keys, closed_keys = [], []
    for v in range(g.n):
        nb = g.adj[v]
        open_keys.append(("o", nb, labels[v]))
        closed_keys.append(("c", tuple(sorted(nb + (v,))), labels[v]))
    return open_keys, closed_keys


def _prune_twins(cands, open_keys, closed_keys):
    """Drop candidates that have a smaller structural twin among the candidates."""
    if open_keys is None:
        return cands
    seen = set()
    kept = []
    for x in cands:
        ko, kc = open_keys[x], closed_keys[x]
        if ko not in seen and kc not in seen:
            kept.append(x)
        seen.add(ko)
        seen.add(kc)
    return kept


class _Proj:
    """One embedding of the current code prefix into the graph."""

    __slots__ = ("nodes", "ts", "path", "back")

    def __init__(self, nodes, ts, path, back):
        self.nodes = nodes  # timestamp -> node
        self.ts = ts  # node -> timestamp (-1 if undiscovered)
        self.path = path  # rightmost path as timestamps, root first
        self.back = back  # last far timestamp emitted as backward from the rightmost node

    def key(self):
        return (
            tuple((self.nodes[t], t) for t in self.path),
            frozenset(self.nodes),
            self.back,
        )


def encode_min_dfs(
    g: Graph,
    labeler: Callable[[int], int] | None = None,
    edge_labeler: Callable[[tuple[int, int]], int] | None = None,
    return_order: bool = False,
):
    """Minimum DFS code of a connected graph.

    Node labels default to degrees and edge labels to 0. With
    ``return_order=True`` also returns the node discovered at each timestamp
    for one embedding that realises the code.
    """
    if g.n < 2 or g.num_edges == 0:
        raise ValidationError("graph needs at least one edge to encode")
    if not is_connected(g):
        raise ValidationError("graph is not connected")
    labels, elab = _default_labels(g, labeler, edge_labeler)
    adj = g.adj
    n = g.n
    if elab is None or len(set(elab.values())) <= 1:
        open_keys, closed_keys = _twin_keys(g, labels)
    else:
        open_keys = closed_keys = None

    best_first = None
    projs: list[_Proj] = []
    for u in _prune_twins(range(n), open_keys, closed_keys):
        for v in _prune_twins(adj[u], open_keys, closed_keys):
            lab = (labels[u], _edge_label(elab, u, v), labels[v])
            if best_first is None or lab < best_first:
                best_first, projs = lab, []
            if lab == best_first:
                ts = [-1] * n
                ts[u], ts[v] = 0, 1
                projs.append(_Proj([u, v], ts, [0, 1], -1))
    code = [FiveTuple(0, 1, *best_first)]

    m = g.num_edges
    while len(code) < m:
        best = None
        ext = []  # (proj, kind, payload)
        for p in projs:
            nodes, ts, path = p.nodes, p.ts, p.path
            r_t = path[-1]
            r = nodes[r_t]
            found = False
            # backward edge: smallest far timestamp on the rightmost path not yet used
            for t in path[:-2]:
                if t > p.back and nodes[t] in adj[r]:
                    key = (0, t, labels[r], _edge_label(elab, r, nodes[t]), labels[nodes[t]])
                    if best is None or key < best:
                        best, ext = key, []
                    if key == best:
                        ext.append((p, "b", t))
                    found = True
                    break
            if found:
                continue
            for depth in range(len(path) - 1, -1, -1):
                i_t = path[depth]
                src = nodes[i_t]
                cands = [x for x in adj[src] if ts[x] < 0]
                if not cands:
                    continue
                for x in _prune_twins(cands, open_keys, closed_keys):
                    key = (1, -i_t, labels[src], _edge_label(elab, src, x), labels[x])
                    if best is None or key < best:
                        best, ext = key, []
                    if key == best:
                        ext.append((p, "f", (depth, x)))
                break
        if best is None:  # pragma: no cover - connected graphs always extend
            raise ValidationError("failed to extend DFS code")
        if best[0] == 0:
            r_t = ext[0][0].path[-1]
            code.append(FiveTuple(r_t, best[1], best[2], best[3], best[4]))
        else:
            new_t = len(ext[0][0].nodes)
            code.append(FiveTuple(-best[1], new_t, best[2], best[3], best[4]))
        new_projs = []
        seen = set()
        for p, kind, payload in ext:
            if kind == "b":
                q = _Proj(p.nodes, p.ts, p.path, payload)
            else:
                depth, x = payload
                nodes = p.nodes + [x]
                ts = list(p.ts)
                ts[x] = len(p.nodes)
                q = _Proj(nodes, ts, p.path[: depth + 1] + [ts[x]], -1)
            k = q.key()
            if k not in seen:
                seen.add(k)
                new_projs.append(q)
        projs = new_projs
    if return_order:
        return code, list(projs[0].nodes)
    return code


# ---------------------------------------------------------------- decoding


def _build(code, strict: bool) -> Graph:
    edges = set()
    max_t = 0  # node 0 exists from the start
    for idx, tup in enumerate(code):
        tu, tv = int(tup[0]), int(tup[1])
        pair = (tu, tv) if tu < tv else (tv, tu)
        problem = None
        if tu == tv:
            problem = "self-loop"
        elif tu < 0 or tv < 0:
            problem = "negative timestamp"
        elif pair in edges:
            problem = "duplicate edge"
        elif max(tu, tv) > max_t + 1:
            problem = f"timestamp beyond {max_t + 1}"
        elif strict:
            if tu > max_t:
                problem = "source node does not exist"
            elif tv > max_t and tv != max_t + 1:
                problem = "forward edge must discover the next timestamp"
            elif tv <= max_t and tv > tu:
                problem = "backward edge must point to an earlier timestamp"
        if problem is not None:
            if strict:
                raise ValidationError(f"tuple {idx} {tuple(tup)}: {problem}")
            continue
        edges.add(pair)
        max_t = max(max_t, tu, tv)
    if not edges:
        raise EmptyGenerationError("no admissible 5-tuples in code")
    return Graph(max_t + 1, edges)


def decode(code) -> Graph:
    """Rebuild a graph from a valid DFS code; raises on any rule violation."""
    return _build(code, strict=True)


def repair_decode(code) -> Graph:
    """Rebuild a graph, skipping tuples that conflict with what came before.

    A tuple is skipped when it is a self-loop, repeats a timestamp pair, or
    references a timestamp beyond the next unseen one.
    """
    return _build(code, strict=False)


# ---------------------------------------------------------------- one-hot


@dataclass(frozen=True)
class Vocabulary:
    t_size: int
    l_size: int
    e_size: int = 2

    @property
    def eos_t(self) -> int:
        return self.t_size - 1

    @property
    def eos_l(self) -> int:
        return self.l_size - 1

    @property
    def eos_e(self) -> int:
        return 1

    @property
    def sizes(self) -> tuple[int, int, int, int, int]:
        return (self.t_size, self.t_size, self.l_size, self.e_size, self.l_size)

    @property
    def width(self) -> int:
        return 2 * self.t_size + 2 * self.l_size + self.e_size

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for s in self.sizes:
            out.append(acc)
            acc += s
        return tuple(out)

    @property
    def eos_tuple(self) -> FiveTuple:
        return FiveTuple(self.eos_t, self.eos_t, self.eos_l, self.eos_e, self.eos_l)

    def is_eos(self, tup) -> bool:
        return any(int(x) == e for x, e in zip(tup, self.eos_tuple))

    @classmethod
    def from_codes(cls, codes) -> "Vocabulary":
        max_t, max_l = 0, 0
        for code in codes:
            for t in code:
                max_t = max(max_t, t.t_u, t.t_v)
                max_l = max(max_l, t.l_u, t.l_v)
        return cls(t_size=max_t + 2, l_size=max_l + 2, e_size=2)

    def to_dict(self):
        return {"t_size": self.t_size, "l_size": self.l_size, "e_size": self.e_size}


def to_indices(code, vocab: Vocabulary) -> np.ndarray:
    """Integer symbols per component, shape ``(len(code) + 1, 5)``, EOS row last."""
    rows = []
    limits = (vocab.eos_t, vocab.eos_t, vocab.eos_l, 1, vocab.eos_l)
    for tup in code:
        for x, lim, name in zip(tup, limits, FiveTuple._fields):
            if not 0 <= x < lim:
                raise VocabularyOverflowError(f"{name}={x} does not fit vocabulary {vocab}")
        rows.append(tuple(tup))
    rows.append(tuple(vocab.eos_tuple))
    return np.asarray(rows, dtype=np.int64)


def to_one_hot(code, vocab: Vocabulary) -> np.ndarray:
    """Component-wise one-hot rows of width ``vocab.width`` (EOS row appended)."""
    idx = to_indices(code, vocab)
    out = np.zeros((len(idx), vocab.width))
    rows = np.arange(len(idx))
    for c, off in enumerate(vocab.offsets):
        out[rows, off + idx[:, c]] = 1.0
    return out


def code_to_text(code, eos: bool = True) -> str:
    lines = [" ".join(str(int(x)) for x in t) for t in code]
    if eos:
        lines.append("EOS")
    return "\n".join(lines) + "\n"


def code_from_text(text: str) -> DfsCode:
    code = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line == "EOS":
            break
        code.append(FiveTuple(*(int(x) for x in line.split())))
    return code
