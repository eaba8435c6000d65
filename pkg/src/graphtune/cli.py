"""Command-line entry point: ``graphtune {dataset,train,generate,eval,ablate,latent}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .datasets import build_dataset, condition_scaling, er_corpus, load_manifest, save_manifest, walk_corpus, ws_corpus
from .errors import ConfigError, GraphTuneError
from .evaluation import (
    eval_features,
    format_ablation,
    format_feature_report,
    format_latent,
    latent_analysis,
    pairwise_emit,
    rmse_vs_condition,
    run_ablation,
)
from .features import FEATURE_NAMES
from .generate import POLICIES, batch_summary, generate_batch, write_generation
from .graph import read_edge_list
from .model import ConditionSpots, HyperParams
from .train import TrainConfig, load_checkpoint, save_checkpoint, train

log = logging.getLogger("graphtune")

# scale defaults for the dataset command; overridable from the config file
DATASET_KEYS = {"kind": str, "graphs": int, "nodes": int, "k": int, "p_min": float, "p_max": float, "source": str}
TRAIN_KEYS = (
    "epochs", "batch_size", "lr", "beta", "seed", "plateau", "clip", "checkpoint_every",
)
HP_KEYS = (
    "condition_dim", "enc_layers", "enc_hidden", "enc_embed", "latent_dim",
    "dec_layers", "dec_hidden", "dec_embed", "sos_dim", "cond_shift", "cond_scale",
)
FLOAT_KEYS = {"lr", "beta", "clip", "p_min", "p_max", "cond_shift", "cond_scale"}
STR_KEYS = {"kind", "source", "spots"}


def parse_config(path) -> dict:
    """Flat ``key = value`` text; ``#`` starts a comment. Keys mirror TrainConfig/HyperParams."""
    if path is None:
        return {}
    out = {}
    allowed = set(TRAIN_KEYS) | set(HP_KEYS) | set(DATASET_KEYS) | {"spots", "standardize"}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in allowed:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            if key in STR_KEYS:
                out[key] = value
            elif key in FLOAT_KEYS:
                out[key] = float(value)
            else:
                out[key] = int(value)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def _spots(args, cfg) -> ConditionSpots:
    text = args.spots if getattr(args, "spots", None) else cfg.get("spots", "all")
    return ConditionSpots.parse(text)


def build_configs(manifest, cfg: dict, seed: int | None, spots: ConditionSpots):
    hp_kw = {k: cfg[k] for k in HP_KEYS if k in cfg}
    hp_kw.setdefault("condition_dim", manifest.dim)
    if hp_kw["condition_dim"] != manifest.dim:
        raise ConfigError(f"condition_dim {hp_kw['condition_dim']} != manifest dim {manifest.dim}")
    if cfg.get("standardize") and not ({"cond_shift", "cond_scale"} & set(hp_kw)):
        hp_kw["cond_shift"], hp_kw["cond_scale"] = condition_scaling(manifest)
    tr_kw = {k: cfg[k] for k in TRAIN_KEYS if k in cfg}
    if seed is not None:
        tr_kw["seed"] = seed
    beta = tr_kw.get("beta", 3.0)
    hp = HyperParams(manifest.vocab, beta=beta, spots=spots, **hp_kw)
    return hp, TrainConfig(spots=spots, **tr_kw)


def _write_text(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text, encoding="utf-8")


def _write_json(out: Path, doc: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "metadata.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# ------------------------------------------------------------------ commands


def cmd_dataset(args, cfg) -> None:
    kind = args.kind or cfg.get("kind", "ws")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    count = cfg.get("graphs", 200)
    conditions = None
    if kind == "ws":
        graphs, params = ws_corpus(count, n=cfg.get("nodes", 50), k=cfg.get("k", 3),
                                   p_range=(cfg.get("p_min", 0.1), cfg.get("p_max", 0.6)), seed=seed)
        feature = args.feature or "aspl"
    elif kind == "er":
        graphs, params = er_corpus(count, n=cfg.get("nodes", 20),
                                   p_range=(cfg.get("p_min", 0.15), cfg.get("p_max", 0.6)), seed=seed)
        # the ER condition is the generator's edge probability unless a feature is requested
        feature = args.feature or "density"
        conditions = None if args.feature else params
    elif kind == "walk":
        source = args.source or cfg.get("source")
        if not source:
            raise ConfigError("walk corpora need --source <edge list>")
        graphs = walk_corpus(read_edge_list(source), count, cfg.get("nodes", 50), seed=seed)
        feature = args.feature or "aspl"
    else:
        raise ConfigError(f"unknown corpus kind {kind!r}")
    condition_dim = cfg.get("condition_dim", 10)
    m = build_dataset(graphs, feature, dim=condition_dim, seed=seed, conditions=conditions)
    out = Path(args.out)
    save_manifest(m, out)
    conds = [e.condition for e in m.entries]
    report = (
        f"kind\t{kind}\nfeature\t{feature}\ngraphs\t{len(m.entries)}\n"
        f"train\t{len(m.train)}\nvalidation\t{len(m.validation)}\n"
        f"condition_min\t{min(conds)}\ncondition_max\t{max(conds)}\nmax_code_len\t{m.max_code_len}\n"
    )
    _write_text(out, "report.txt", report)
    _write_json(out, {"command": "dataset", "kind": kind, "feature": feature, "seed": seed,
                      "graphs": len(m.entries), "vocab": m.vocab.to_dict(), "version": __version__})
    print(report, end="")


def cmd_train(args, cfg) -> None:
    if not args.manifest:
        raise ConfigError("train needs --manifest")
    m = load_manifest(args.manifest)
    hp, config = build_configs(m, cfg, args.seed, _spots(args, cfg))
    resume = load_checkpoint(args.checkpoint) if args.checkpoint else None
    out = Path(args.out)
    ck = train(m, hp, config, resume=resume, out_dir=out)
    save_checkpoint(ck, out / "final.ckpt")
    last = ck.history[-1] if ck.history else {}
    report = f"epochs\t{ck.epoch}\nstopped\t{ck.stopped or 'max-epochs'}\nbest_val\t{ck.best_val}\n"
    report += "".join(f"{k}\t{v}\n" for k, v in last.items())
    _write_text(out, "report.txt", report)
    _write_json(out, {"command": "train", "hyperparams": hp.to_dict(), "config": config.to_dict(),
                      "epochs": ck.epoch, "stopped": ck.stopped, "version": __version__})
    print(report, end="")


def _conditions(args, default):
    return [float(c) for c in (args.condition or default)]


def cmd_generate(args, cfg) -> None:
    if not args.checkpoint:
        raise ConfigError("generate needs --checkpoint")
    ck = load_checkpoint(args.checkpoint)
    conds = _conditions(args, [])
    if not conds:
        raise ConfigError("generate needs at least one --condition")
    seed = args.seed if args.seed is not None else 0
    batches = []
    lines = ["condition\tgenerated\tfailed\tconnected_rate\ttruncated"]
    for c in conds:
        graphs, meta = generate_batch(ck, c, args.count, seed, args.max_steps, args.policy, args.retries)
        batches.append((c, graphs, meta))
        s = batch_summary(meta)
        lines.append(f"{c:g}\t{s['generated']}\t{s['failed']}\t{s['connected_rate']}\t{s['truncated']}")
    out = Path(args.out)
    write_generation(out, batches, {"command": "generate", "seed": seed, "count": args.count,
                                    "policy": args.policy, "version": __version__})
    _write_text(out, "report.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_eval(args, cfg) -> None:
    if not args.checkpoint:
        raise ConfigError("eval needs --checkpoint")
    ck = load_checkpoint(args.checkpoint)
    conds = _conditions(args, [])
    if not conds:
        raise ConfigError("eval needs at least one --condition")
    seed = args.seed if args.seed is not None else 0
    feature = args.feature or "aspl"
    by_cond, batches = {}, []
    for c in conds:
        graphs, meta = generate_batch(ck, c, args.count, seed, args.max_steps, args.policy, args.retries)
        by_cond[c] = [g for g in graphs if g is not None]
        batches.append((c, graphs, meta))
    dataset = [e.graph for e in load_manifest(args.manifest).entries] if args.manifest else None
    rep = eval_features(by_cond, FEATURE_NAMES, dataset)
    out = Path(args.out)
    write_generation(out, batches, {"command": "eval", "seed": seed, "count": args.count,
                                    "feature": feature, "version": __version__})
    text = format_feature_report(rep)
    text += f"\nrmse({feature})\n"
    for c in conds:
        vals = [r.get(feature) if feature != "aspl" else r.get("aspl_lcc") for r in rep.rows if r["condition"] == c]
        vals = [v for v in vals if v is not None]
        text += f"{c:g}\t{rmse_vs_condition(vals, c):.4f}\n" if vals else f"{c:g}\tundefined\n"
    _write_text(out, "report.txt", text)
    pairwise_emit(rep, out / "pairplot.svg", out / "features.csv")
    print(text, end="")


def cmd_ablate(args, cfg) -> None:
    if not args.manifest:
        raise ConfigError("ablate needs --manifest")
    m = load_manifest(args.manifest)
    if args.feature and args.feature != m.feature:
        raise ConfigError(f"manifest conditions on {m.feature}, not {args.feature}")
    conds = _conditions(args, [])
    if not conds:
        raise ConfigError("ablate needs at least one --condition")
    hp, config = build_configs(m, cfg, args.seed, ConditionSpots())
    seed = args.seed if args.seed is not None else config.seed
    table = run_ablation(m, hp, config, conds, args.count, seed)
    out = Path(args.out)
    text = format_ablation(table)
    _write_text(out, "report.txt", text)
    _write_json(out, {"command": "ablate", "conditions": conds, "rmse": table.rmse, "failed": table.failed,
                      "count": args.count, "seed": seed, "config": config.to_dict(), "version": __version__})
    print(text, end="")


def cmd_latent(args, cfg) -> None:
    if not (args.checkpoint and args.manifest):
        raise ConfigError("latent needs --checkpoint and --manifest")
    ck = load_checkpoint(args.checkpoint)
    m = load_manifest(args.manifest)
    conds = _conditions(args, [0.0, 0.25, 0.5, 0.75, 1.0])
    seed = args.seed if args.seed is not None else 0
    rep = latent_analysis(ck, m, conds, args.count, seed, cfg.get("latent_dim", ck.hp.latent_dim))
    out = Path(args.out)
    text = format_latent(rep)
    _write_text(out, "report.txt", text)
    _write_json(out, {"command": "latent", "latent_corr": rep.latent_corr, "condition_corr": rep.condition_corr,
                      "conditions": rep.conditions, "mean_density": rep.mean_density, "seed": seed,
                      "version": __version__})
    print(text, end="")


COMMANDS = {
    "dataset": cmd_dataset,
    "train": cmd_train,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "latent": cmd_latent,
}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphtune", description="Conditional graph generation over DFS codes")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value file with TrainConfig/HyperParams names")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True)
        p.add_argument("--manifest")
        p.add_argument("--checkpoint")
        p.add_argument("--feature", choices=FEATURE_NAMES)
        p.add_argument("--condition", type=float, action="append")
        p.add_argument("--count", type=int, default=300)
        p.add_argument("--spots", help="comma list of e,d,h (or all/none)")
        p.add_argument("--policy", choices=POLICIES, default="accept-all")
        p.add_argument("--retries", type=int, default=0)
        p.add_argument("--max-steps", type=int)
        if name == "dataset":
            p.add_argument("--kind", choices=("ws", "er", "walk"))
            p.add_argument("--source", help="edge list sampled by the walk corpus")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = make_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args, parse_config(args.config))
    except GraphTuneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
