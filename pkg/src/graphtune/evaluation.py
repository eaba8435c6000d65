"""Experiment harness: feature tables, RMSE ablation, pair plots, latent analysis."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import DatasetManifest
from .errors import ConfigError, DivergenceError, UndefinedFeatureError, ValidationError
from .features import FEATURE_NAMES, avg_shortest_path_length, compute_feature, edge_density, feature_vector
from .generate import generate_batch
from .graph import Graph, largest_component
from .model import ConditionSpots, HyperParams, as_tensors, encode, make_batch
from .train import Checkpoint, TrainConfig, train

log = logging.getLogger(__name__)

VARIANTS = {
    "original": ConditionSpots(True, True, True),
    "no-encoder-input": ConditionSpots(False, True, True),
    "no-decoder-input": ConditionSpots(True, False, True),
    "no-hidden-init": ConditionSpots(True, True, False),
}


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def pearson(x, y) -> float | None:
    """Pearson correlation; ``None`` when either side has zero variance."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        return None
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        return None
    return float(dx @ dy) / (sx * sy)


def realized_value(g: Graph, feature: str) -> float | None:
    """Feature of a generated graph; aspl falls back to the largest component."""
    try:
        return compute_feature(g, feature)
    except UndefinedFeatureError:
        if feature == "aspl" and g.n >= 2:
            lcc = largest_component(g)
            return avg_shortest_path_length(lcc) if lcc.n >= 2 else None
        return None


# ------------------------------------------------------------------ feature table


@dataclass
class FeatureReport:
    names: tuple
    conditions: list
    rows: list[dict]  # per graph: condition, graph_id, features, aspl_lcc
    means: dict  # condition -> feature -> mean or None
    counts: dict
    dataset: dict = field(default_factory=dict)  # feature -> (p25, p50, p75, mean)


def eval_features(graphs_by_condition: dict, names=FEATURE_NAMES, dataset_graphs=None) -> FeatureReport:
    if not graphs_by_condition:
        raise ValidationError("no condition sets given")
    names = tuple(names)
    rows, means, counts = [], {}, {}
    for cond, graphs in graphs_by_condition.items():
        graphs = [g for g in graphs if g is not None]
        if not graphs:
            raise ValidationError(f"condition {cond} has no graphs")
        mine = []
        for i, g in enumerate(graphs):
            fv = feature_vector(g, names, largest_component_aspl="aspl" in names)
            mine.append(dict(fv, condition=cond, graph_id=i))
        rows += mine
        counts[cond] = len(mine)
        keys = list(names) + (["aspl_lcc"] if "aspl" in names else [])
        means[cond] = {k: _mean([r[k] for r in mine]) for k in keys}
    dataset = {}
    if dataset_graphs:
        for name in names:
            vals = []
            for g in dataset_graphs:
                try:
                    vals.append(compute_feature(g, name))
                except UndefinedFeatureError:
                    pass
            if vals:
                p25, p50, p75 = np.percentile(vals, [25, 50, 75])
                dataset[name] = (float(p25), float(p50), float(p75), _mean(vals))
    return FeatureReport(names, list(graphs_by_condition), rows, means, counts, dataset)


def _fmt(v, digits=3):
    return "--" if v is None else f"{v:.{digits}f}"


def format_feature_report(rep: FeatureReport) -> str:
    head = ["condition", "count"] + list(rep.names)
    lines = ["\t".join(head)]
    for cond in rep.conditions:
        m = rep.means[cond]
        cells = [str(cond), str(rep.counts[cond])]
        for name in rep.names:
            cell = _fmt(m[name])
            if name == "aspl" and m.get("aspl_lcc") is not None and m["aspl_lcc"] != m["aspl"]:
                # some graphs were disconnected: show the largest-component mean too
                cell = f"{cell} ({_fmt(m['aspl_lcc'])})"
            cells.append(cell)
        lines.append("\t".join(cells))
    if rep.dataset:
        lines.append("")
        lines.append("dataset\tp25\tp50\tp75\tmean")
        for name, (a, b, c, mean) in rep.dataset.items():
            lines.append(f"{name}\t{_fmt(a)}\t{_fmt(b)}\t{_fmt(c)}\t{_fmt(mean)}")
    return "\n".join(lines) + "\n"


def write_feature_rows(rep: FeatureReport, path) -> None:
    cols = ["condition", "graph_id"] + list(rep.names) + (["aspl_lcc"] if "aspl" in rep.names else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rep.rows:
            w.writerow(["" if r.get(c) is None else repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])


# ------------------------------------------------------------------ RMSE / ablation


def rmse_vs_condition(values, target: float) -> float:
    vals = np.asarray(list(values), dtype=np.float64)
    if vals.size == 0:
        raise ValidationError("RMSE needs at least one value")
    return float(np.sqrt(np.mean((vals - float(target)) ** 2)))


@dataclass
class AblationTable:
    conditions: list
    rmse: dict  # variant -> list of RMSE per condition (None if failed)
    values: dict  # variant -> list of realized feature values per condition
    failed: dict  # variant -> reason

    def mean_rmse(self, variant) -> float | None:
        r = self.rmse.get(variant)
        if not r or any(v is None for v in r):
            return None
        return math.fsum(r) / len(r)


def generated_values(ck: Checkpoint, feature: str, condition: float, count: int, seed: int) -> list[float]:
    graphs, _ = generate_batch(ck, condition, count, seed)
    vals = [realized_value(g, feature) for g in graphs if g is not None]
    return [v for v in vals if v is not None]


def run_ablation(
    manifest: DatasetManifest,
    hp: HyperParams,
    config: TrainConfig,
    conditions,
    count: int = 300,
    seed: int = 0,
    trained: dict | None = None,
) -> AblationTable:
    """Train the original model and the three single-spot removals, then score RMSE.

    ``trained`` may supply already-trained checkpoints by variant name.
    """
    conditions = [float(c) for c in conditions]
    rmse, values, failed = {}, {}, {}
    for name, spots in VARIANTS.items():
        ck = (trained or {}).get(name)
        try:
            if ck is None:
                ck = train(manifest, replace(hp, spots=spots), replace(config, spots=spots))
            elif ck.hp.spots != spots:
                raise ConfigError(f"checkpoint for {name} has spots {ck.hp.spots}")
        except DivergenceError as exc:
            log.warning("variant %s failed: %s", name, exc)
            failed[name] = str(exc)
            rmse[name] = [None] * len(conditions)
            values[name] = [[] for _ in conditions]
            continue
        values[name] = [generated_values(ck, manifest.feature, c, count, seed) for c in conditions]
        rmse[name] = [rmse_vs_condition(v, c) if v else None for v, c in zip(values[name], conditions)]
    return AblationTable(conditions, rmse, values, failed)


def format_ablation(table: AblationTable) -> str:
    lines = ["variant\t" + "\t".join(f"C={c:g}" for c in table.conditions) + "\tmean"]
    for name in VARIANTS:
        cells = [_fmt(v) for v in table.rmse[name]]
        tag = " (failed)" if name in table.failed else ""
        lines.append(f"{name}{tag}\t" + "\t".join(cells) + f"\t{_fmt(table.mean_rmse(name))}")
    orig = table.mean_rmse("original")
    others = [table.mean_rmse(n) for n in VARIANTS if n != "original"]
    if orig is not None and all(o is not None for o in others):
        lowest = all(orig <= o for o in others)
        lines.append("")
        lines.append(
            f"trend: original mean RMSE {orig:.3f} is {'the lowest' if lowest else 'not the lowest'}"
            " (full-scale reference: original lowest)"
        )
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ pair plot


def pairwise_emit(rep: FeatureReport, svg_path, csv_path=None) -> tuple[int, int]:
    """Scatter-matrix SVG of per-graph features colored by condition; returns (grid size, classes)."""
    names = [n for n in rep.names if any(r.get(n) is not None for r in rep.rows)]
    if len(names) < 2:
        raise ValidationError("pair plot needs at least two defined features")
    if csv_path is not None:
        write_feature_rows(rep, csv_path)
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    k = len(names)
    conds = rep.conditions
    colors = plt.get_cmap("viridis")(np.linspace(0.1, 0.9, len(conds)))
    fig, axes = plt.subplots(k, k, figsize=(2.2 * k, 2.2 * k), squeeze=False)
    for i, yi in enumerate(names):
        for j, xj in enumerate(names):
            ax = axes[i][j]
            for cond, col in zip(conds, colors):
                sub = [r for r in rep.rows if r["condition"] == cond]
                if i == j:
                    vals = [r[xj] for r in sub if r[xj] is not None]
                    if vals:
                        ax.hist(vals, bins=15, color=col, alpha=0.5, label=str(cond))
                else:
                    pts = [(r[xj], r[yi]) for r in sub if r[xj] is not None and r[yi] is not None]
                    if pts:
                        xs, ys = zip(*pts)
                        ax.scatter(xs, ys, s=6, color=col, alpha=0.6)
            if i == k - 1:
                ax.set_xlabel(xj)
            if j == 0:
                ax.set_ylabel(yi)
    axes[0][0].legend(title="condition", fontsize=6)
    fig.tight_layout()
    # a fixed hash salt keeps the SVG byte-stable across runs
    matplotlib.rcParams["svg.hashsalt"] = "graphtune"
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return k, len(conds)


# ------------------------------------------------------------------ latent analysis


@dataclass
class LatentReport:
    latent_corr: list  # Pearson(z_l, condition) per latent dimension
    condition_corr: float | None  # Pearson(requested condition, realized density)
    conditions: list
    mean_density: list


def encode_means(ck: Checkpoint, entries) -> np.ndarray:
    hp = ck.hp
    batch = make_batch([e.code for e in entries], [e.condition for e in entries], hp.vocab, hp.condition_dim)
    mu, _ = encode(as_tensors(ck.params), hp, batch.x, batch.mask, batch.cond)
    return mu.data


def latent_analysis(
    ck: Checkpoint,
    manifest: DatasetManifest,
    conditions=(0.0, 0.25, 0.5, 0.75, 1.0),
    count: int = 300,
    seed: int = 0,
    latent_dim: int | None = 4,
) -> LatentReport:
    if latent_dim is not None and ck.hp.latent_dim != latent_dim:
        raise ConfigError(f"checkpoint latent_dim {ck.hp.latent_dim} != expected {latent_dim}")
    entries = manifest.validation or manifest.train
    mu = encode_means(ck, entries)
    target = [e.condition for e in entries]
    latent_corr = [pearson(mu[:, l], target) for l in range(ck.hp.latent_dim)]
    xs, ys, means = [], [], []
    for c in conditions:
        graphs, _ = generate_batch(ck, float(c), count, seed)
        dens = [edge_density(g) for g in graphs if g is not None and g.n >= 2]
        xs += [float(c)] * len(dens)
        ys += dens
        means.append(_mean(dens))
    return LatentReport(latent_corr, pearson(xs, ys), [float(c) for c in conditions], means)


def format_latent(rep: LatentReport) -> str:
    lines = ["latent\tpearson_with_condition"]
    for i, r in enumerate(rep.latent_corr):
        lines.append(f"z{i}\t{'undefined' if r is None else f'{r:.3f}'}")
    lines.append("")
    lines.append("condition\tmean_density")
    for c, m in zip(rep.conditions, rep.mean_density):
        lines.append(f"{c:g}\t{_fmt(m)}")
    cc = rep.condition_corr
    lines.append(f"pearson(condition, density)\t{'undefined' if cc is None else f'{cc:.3f}'}")
    return "\n".join(lines) + "\n"
