"""Training corpora: random-graph generators, random-walk sampling, manifests."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dfscode import Vocabulary, encode_min_dfs
from .errors import (
    EmptyManifestError,
    GenerationBudgetError,
    UndefinedFeatureError,
    ValidationError,
)
from .features import build_condition_vector, compute_feature
from .graph import Graph, induced_subgraph, is_connected, read_edge_list, write_edge_list

log = logging.getLogger(__name__)

TRAIN_FRACTION = 0.9
RETRY_BUDGET = 100

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Per-item seed from a base seed and an index (stable across processes)."""
    return splitmix64((splitmix64(int(seed) & _MASK64) + int(index)) & _MASK64) >> 1


# ------------------------------------------------------------------ generators


def _ws_lattice(n: int, k: int) -> list[tuple[int, int]]:
    half = k // 2
    edges = [(u, (u + j) % n) for j in range(1, half + 1) for u in range(n)]
    if k % 2:
        edges += [(u, u + n // 2) for u in range(n // 2)]
    return edges


def gen_ws(n: int, k: int, p: float, seed: int, retries: int = RETRY_BUDGET) -> Graph:
    """Connected Watts-Strogatz graph.

    Each node links to ``k // 2`` ring neighbours per side; odd ``k`` adds the
    chord to the antipodal node ``i + n // 2``. Every lattice edge then has
    its far endpoint rewired with probability ``p`` to a uniformly chosen node
    that is neither the near endpoint nor already adjacent to it. Draws are
    repeated until connected.
    """
    if not (k >= 2 and n > k):
        raise ValidationError(f"need n > K >= 2, got n={n}, K={k}")
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"rewiring probability must be in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    lattice = _ws_lattice(n, k)
    for _ in range(retries):
        adj = [set() for _ in range(n)]
        for u, v in lattice:
            adj[u].add(v)
            adj[v].add(u)
        for u, v in lattice:
            if rng.random() >= p:
                continue
            if v not in adj[u] or len(adj[u]) >= n - 1:
                continue
            while True:
                w = int(rng.integers(n))
                if w != u and w not in adj[u]:
                    break
            adj[u].discard(v)
            adj[v].discard(u)
            adj[u].add(w)
            adj[w].add(u)
        g = Graph(n, ((u, v) for u in range(n) for v in adj[u] if u < v))
        if is_connected(g):
            return g
    raise GenerationBudgetError(f"no connected WS graph within {retries} draws")


def gen_er(n: int, p: float, seed: int, retries: int = RETRY_BUDGET) -> Graph:
    """Connected G(n, p) graph, redrawn until connected."""
    if n < 2:
        raise ValidationError(f"need n >= 2, got {n}")
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"edge probability must be in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    for _ in range(retries):
        keep = rng.random(len(iu)) < p
        g = Graph(n, zip(iu[keep].tolist(), ju[keep].tolist()))
        if is_connected(g):
            return g
    raise GenerationBudgetError(f"no connected ER graph (n={n}, p={p}) within {retries} draws")


def random_walk_sample(
    big: Graph,
    target_nodes: int,
    seed: int,
    start: int | None = None,
    max_steps: int | None = None,
) -> Graph:
    """Induced subgraph on the first ``target_nodes`` distinct nodes of a random walk.

    The start node is uniform over all nodes (isolated picks are redrawn); each
    hop follows one of the current node's edges chosen uniformly.
    """
    if target_nodes < 2:
        raise ValidationError("target_nodes must be >= 2")
    if big.n < target_nodes:
        raise ValidationError(f"source graph has only {big.n} nodes")
    rng = np.random.default_rng(seed)
    if max_steps is None:
        max_steps = 1000 * target_nodes
    if start is None:
        for _ in range(RETRY_BUDGET):
            start = int(rng.integers(big.n))
            if big.adj[start]:
                break
        else:
            raise GenerationBudgetError("could not find a non-isolated start node")
    elif not big.adj[start]:
        raise GenerationBudgetError(f"start node {start} is isolated")
    visited = {start: None}
    cur = start
    steps = 0
    while len(visited) < target_nodes:
        if steps >= max_steps:
            raise GenerationBudgetError(f"walk found {len(visited)} of {target_nodes} nodes in {max_steps} steps")
        nb = big.adj[cur]
        cur = nb[int(rng.integers(len(nb)))]
        visited.setdefault(cur)
        steps += 1
    return induced_subgraph(big, visited)


def ws_corpus(count: int, n: int = 50, k: int = 3, p_range=(0.1, 0.6), seed: int = 0):
    """``count`` WS graphs with rewiring probability uniform in ``p_range``."""
    graphs, params = [], []
    for i in range(count):
        s = derive_seed(seed, i)
        p = float(np.random.default_rng(s).uniform(*p_range))
        graphs.append(gen_ws(n, k, p, s + 1))
        params.append(p)
    return graphs, params


def er_corpus(count: int, n: int = 20, p_range=(0.15, 0.6), seed: int = 0):
    graphs, params = [], []
    for i in range(count):
        s = derive_seed(seed, i)
        p = float(np.random.default_rng(s).uniform(*p_range))
        graphs.append(gen_er(n, p, s + 1))
        params.append(p)
    return graphs, params


def walk_corpus(big: Graph, count: int, target_nodes: int = 50, seed: int = 0):
    return [random_walk_sample(big, target_nodes, derive_seed(seed, i)) for i in range(count)]


# ------------------------------------------------------------------ manifests


@dataclass
class DatasetEntry:
    graph: Graph
    code: list
    condition: float
    split: str
    path: str | None = None


@dataclass
class DatasetManifest:
    seed: int
    feature: str
    dim: int
    vocab: Vocabulary
    entries: list[DatasetEntry] = field(default_factory=list)
    round_places: int | None = 1

    @property
    def train(self) -> list[DatasetEntry]:
        return [e for e in self.entries if e.split == "train"]

    @property
    def validation(self) -> list[DatasetEntry]:
        return [e for e in self.entries if e.split == "validation"]

    @property
    def max_code_len(self) -> int:
        return max(len(e.code) for e in self.entries) + 1

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "feature": self.feature,
            "dim": self.dim,
            "round_places": self.round_places,
            "vocab": self.vocab.to_dict(),
            "entries": [{"path": e.path, "condition": e.condition, "split": e.split} for e in self.entries],
        }


def build_dataset(
    graphs,
    feature: str,
    dim: int = 10,
    seed: int = 0,
    conditions=None,
    round_places: int | None = 1,
    vocab: Vocabulary | None = None,
) -> DatasetManifest:
    """Encode graphs, attach rounded condition values, and split 90/10.

    ``conditions`` overrides the measured feature (e.g. a generator parameter).
    Graphs that are disconnected or whose feature is undefined are dropped
    with a log message.
    """
    graphs = list(graphs)
    if not graphs:
        raise EmptyManifestError("no graphs given")
    kept = []
    for i, g in enumerate(graphs):
        if g.n < 2 or not is_connected(g):
            log.warning("graph %d excluded: not connected", i)
            continue
        if conditions is not None:
            value = float(conditions[i])
        else:
            try:
                value = compute_feature(g, feature)
            except UndefinedFeatureError as exc:
                log.warning("graph %d excluded: %s", i, exc)
                continue
        cond = build_condition_vector(value, dim, round_places).value
        kept.append((g, encode_min_dfs(g), cond))
    if not kept:
        raise EmptyManifestError("every graph was excluded")
    codes = [c for _, c, _ in kept]
    if vocab is None:
        vocab = Vocabulary.from_codes(codes)
    n = len(kept)
    n_train = math.ceil(TRAIN_FRACTION * n)
    order = np.random.default_rng(derive_seed(seed, 0x5EED)).permutation(n)
    split = ["validation"] * n
    for idx in order[:n_train]:
        split[int(idx)] = "train"
    entries = [DatasetEntry(g, c, v, s) for (g, c, v), s in zip(kept, split)]
    return DatasetManifest(seed, feature, dim, vocab, entries, round_places)


def save_manifest(manifest: DatasetManifest, out_dir) -> Path:
    """Write graph edge lists under ``out_dir/graphs`` and ``out_dir/manifest.json``."""
    out = Path(out_dir)
    (out / "graphs").mkdir(parents=True, exist_ok=True)
    for i, e in enumerate(manifest.entries):
        rel = f"graphs/g{i:05d}.txt"
        write_edge_list(e.graph, out / rel)
        e.path = rel
    path = out / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest.to_json(), fh, indent=1)
        fh.write("\n")
    return path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    vocab = Vocabulary(**doc["vocab"])
    entries = []
    for item in doc["entries"]:
        g = read_edge_list(path.parent / item["path"])
        entries.append(DatasetEntry(g, encode_min_dfs(g), float(item["condition"]), item["split"], item["path"]))
    if not entries:
        raise EmptyManifestError(f"{path} lists no graphs")
    return DatasetManifest(
        int(doc["seed"]), doc["feature"], int(doc["dim"]), vocab, entries, doc.get("round_places", 1)
    )




def condition_scaling(manifest: DatasetManifest) -> tuple[float, float]:
    """Mean and standard deviation of the training conditions (scale 1 if constant)."""
    vals = np.array([e.condition for e in manifest.train], dtype=np.float64)
    if vals.size == 0:
        raise EmptyManifestError("manifest has no training entries")
    sd = float(vals.std())
    return float(vals.mean()), sd if sd > 0 else 1.0
