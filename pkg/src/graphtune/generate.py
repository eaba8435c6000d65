"""Sampling graphs from a trained checkpoint under a chosen condition value."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .datasets import derive_seed
from .dfscode import FiveTuple, repair_decode
from .errors import EmptyGenerationError, ValidationError
from .graph import Graph, is_connected, write_edge_list
from .model import DecoderState

POLICIES = ("accept-all", "retry-until-connected")


@dataclass
class GenerationResult:
    graph: Graph
    code: list
    steps: int
    truncated: bool


@dataclass
class SlotMeta:
    index: int
    seed: int
    steps: int
    connected: bool
    truncated: bool
    retries: int
    failed: bool
    nodes: int
    edges: int


def default_max_steps(ck) -> int:
    return max(1, math.ceil(1.5 * ck.max_seq_len))


def _sample(p: np.ndarray, u: float) -> int:
    cdf = np.cumsum(p)
    return min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), len(p) - 1)


def generate_one(ck, condition: float, seed: int, max_steps: int | None = None) -> GenerationResult:
    """One free-running decode; stops at the first EOS component or ``max_steps``."""
    hp = ck.hp
    if max_steps is None:
        max_steps = default_max_steps(ck)
    if max_steps < 1:
        raise ValidationError("max_steps must be >= 1")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(hp.latent_dim)
    cond = np.full(hp.condition_dim, float(condition))
    state = DecoderState(ck.params, hp, z, cond)
    eos = hp.vocab.eos_tuple
    code = []
    truncated = True
    steps = 0
    while steps < max_steps:
        dists = state.distributions()
        sym = [_sample(p, rng.random()) for p in dists]
        steps += 1
        if any(s == e for s, e in zip(sym, eos)):
            truncated = False
            break
        code.append(FiveTuple(*sym))
        state.feed(sym)
    graph = repair_decode(code) if code else None
    if graph is None:
        raise EmptyGenerationError("generation produced no admissible 5-tuples")
    return GenerationResult(graph, code, steps, truncated)


def generate_batch(
    ck,
    condition: float,
    count: int,
    seed: int,
    max_steps: int | None = None,
    policy: str = "accept-all",
    retries: int = 0,
):
    """``count`` graphs with per-slot seeds; returns ``(graphs, metadata)``.

    Slot ``i`` uses ``derive_seed(seed, i)`` and retry ``r`` of that slot uses
    ``derive_seed(slot_seed, r)``. Empty generations always count as failed
    attempts; disconnected ones do so only under retry-until-connected.
    Slots that never succeed hold ``None``.
    """
    if count < 1:
        raise ValidationError("count must be >= 1")
    if policy not in POLICIES:
        raise ValidationError(f"unknown connectivity policy {policy!r}")
    graphs, meta = [], []
    for i in range(count):
        slot_seed = derive_seed(seed, i)
        result, used = None, 0
        for attempt in range(retries + 1):
            s = slot_seed if attempt == 0 else derive_seed(slot_seed, attempt)
            used = attempt
            try:
                res = generate_one(ck, condition, s, max_steps)
            except EmptyGenerationError:
                continue
            result = res
            if policy == "accept-all" or is_connected(res.graph):
                break
            result = None if attempt < retries else res
        if result is None:
            graphs.append(None)
            meta.append(SlotMeta(i, slot_seed, 0, False, False, used, True, 0, 0))
            continue
        g = result.graph
        ok = policy == "accept-all" or is_connected(g)
        graphs.append(g if ok else None)
        meta.append(SlotMeta(i, slot_seed, result.steps, is_connected(g), result.truncated, used, not ok, g.n, g.num_edges))
    return graphs, meta


def batch_summary(meta) -> dict:
    ok = [m for m in meta if not m.failed]
    return {
        "count": len(meta),
        "generated": len(ok),
        "failed": len(meta) - len(ok),
        "connected_rate": (sum(m.connected for m in ok) / len(ok)) if ok else None,
        "truncated": sum(m.truncated for m in ok),
    }


def write_generation(out_dir, batches, extra: dict | None = None) -> Path:
    """Write edge lists and ``metadata.json``.

    ``batches`` is a list of ``(condition, graphs, meta)`` triples.
    """
    out = Path(out_dir)
    (out / "graphs").mkdir(parents=True, exist_ok=True)
    doc = dict(extra or {})
    doc["batches"] = []
    for ci, (cond, graphs, meta) in enumerate(batches):
        files = []
        for g, m in zip(graphs, meta):
            if g is None:
                files.append(None)
                continue
            rel = f"graphs/c{ci}_g{m.index:05d}.txt"
            write_edge_list(g, out / rel)
            files.append(rel)
        doc["batches"].append(
            {
                "condition": cond,
                "summary": batch_summary(meta),
                "slots": [dict(asdict(m), path=f) for m, f in zip(meta, files)],
            }
        )
    path = out / "metadata.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path
