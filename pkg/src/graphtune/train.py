"""Mini-batch training loop, loss logging, and bit-exact checkpoints."""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import AdamState, adam_step, clip_grad_norm
from .datasets import DatasetManifest, derive_seed
from .errors import (
    CheckpointIntegrityError,
    CheckpointVersionError,
    ConfigError,
    DivergenceError,
    EmptyManifestError,
)
from .model import ConditionSpots, HyperParams, LossParts, as_tensors, batch_loss, init_params, loss_and_grads, make_batch

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
MAGIC = b"GTCKPT01"
LOG_COLUMNS = ("epoch", "train_loss", "kl", "recon", "val_loss")


@dataclass
class TrainConfig:
    epochs: int = 10_000
    batch_size: int = 37
    lr: float = 1e-3
    beta: float = 3.0
    seed: int = 0
    spots: ConditionSpots = field(default_factory=ConditionSpots)
    plateau: int = 200  # stop after this many epochs without a validation improvement
    clip: float = 5.0
    checkpoint_every: int = 100

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.plateau < 1:
            raise ConfigError(f"invalid training config {self}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["spots"] = ConditionSpots(**d.get("spots", {}))
        return cls(**d)


@dataclass
class Checkpoint:
    hp: HyperParams
    params: dict[str, np.ndarray]
    adam: AdamState
    epoch: int
    rng_state: dict
    config: TrainConfig
    history: list[dict] = field(default_factory=list)
    best_val: float = math.inf
    since_best: int = 0
    stopped: str = ""
    max_seq_len: int = 0  # longest training sequence, EOS row included

    def clone(self) -> "Checkpoint":
        return copy.deepcopy(self)


def new_checkpoint(hp: HyperParams, config: TrainConfig) -> Checkpoint:
    if hp.spots != config.spots or hp.beta != config.beta:
        raise ConfigError("hyperparameter spots/beta disagree with the training config")
    params = init_params(hp, derive_seed(config.seed, 1))
    rng = np.random.default_rng(derive_seed(config.seed, 2))
    return Checkpoint(hp, params, AdamState(), 0, rng.bit_generator.state, config)


# ------------------------------------------------------------------ loop


def _batches(entries, vocab, cdim, order, size):
    for start in range(0, len(order), size):
        chunk = [entries[i] for i in order[start : start + size]]
        yield make_batch([e.code for e in chunk], [e.condition for e in chunk], vocab, cdim)


def evaluate(params: dict, hp: HyperParams, entries, seed: int, batch_size: int = 256) -> LossParts:
    """Loss over ``entries`` with fixed reparameterization noise and no update."""
    if not entries:
        return LossParts(math.nan, math.nan, math.nan)
    rng = np.random.default_rng(seed)
    tp = as_tensors(params)
    tot = kl = rec = 0.0
    for batch in _batches(entries, hp.vocab, hp.condition_dim, np.arange(len(entries)), batch_size):
        B = batch.x.shape[1]
        _, parts = batch_loss(tp, hp, batch, rng.standard_normal((B, hp.latent_dim)))
        tot += parts.total * B
        kl += parts.kl * B
        rec += parts.recon * B
    n = len(entries)
    return LossParts(tot / n, kl / n, rec / n)


def train(
    manifest: DatasetManifest,
    hp: HyperParams,
    config: TrainConfig,
    resume: Checkpoint | None = None,
    out_dir=None,
    stop_after: int | None = None,
) -> Checkpoint:
    """Train until ``config.epochs`` or a validation plateau.

    ``resume`` continues a saved run exactly; ``stop_after`` halts after that
    many epochs in this call (used to interrupt runs). With ``out_dir`` the log,
    periodic checkpoints, and the best-validation snapshot are written there.
    """
    train_set, val_set = manifest.train, manifest.validation
    if not train_set:
        raise EmptyManifestError("manifest has no training entries")
    if manifest.vocab != hp.vocab:
        raise ConfigError(f"manifest vocabulary {manifest.vocab} differs from model vocabulary {hp.vocab}")
    ck = resume.clone() if resume is not None else new_checkpoint(hp, config)
    ck.max_seq_len = max(ck.max_seq_len, manifest.max_code_len)
    rng = np.random.default_rng()
    rng.bit_generator.state = ck.rng_state
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    done_here = 0
    while ck.epoch < config.epochs and not ck.stopped:
        if stop_after is not None and done_here >= stop_after:
            break
        epoch = ck.epoch + 1
        order = rng.permutation(len(train_set))
        tot = kl = rec = 0.0
        for bi, batch in enumerate(_batches(train_set, hp.vocab, hp.condition_dim, order, config.batch_size)):
            B = batch.x.shape[1]
            noise = rng.standard_normal((B, hp.latent_dim))
            parts, grads = loss_and_grads(ck.params, hp, batch, noise)
            if not math.isfinite(parts.total):
                raise DivergenceError(f"non-finite loss {parts.total} at epoch {epoch}, batch {bi}")
            clip_grad_norm(grads, config.clip)
            adam_step(ck.params, grads, ck.adam, lr=config.lr)
            tot += parts.total * B
            kl += parts.kl * B
            rec += parts.recon * B
        n = len(train_set)
        val = evaluate(ck.params, hp, val_set, derive_seed(config.seed, 1_000_000 + epoch))
        row = {"epoch": epoch, "train_loss": tot / n, "kl": kl / n, "recon": rec / n, "val_loss": val.total}
        ck.history.append(row)
        ck.epoch = epoch
        done_here += 1
        watched = val.total if val_set else row["train_loss"]
        improved = watched < ck.best_val
        if improved:
            ck.best_val, ck.since_best = watched, 0
        else:
            ck.since_best += 1
            if ck.since_best >= config.plateau:
                ck.stopped = f"plateau at epoch {epoch}"
        ck.rng_state = rng.bit_generator.state
        if out is not None:
            if improved:
                save_checkpoint(ck, out / "best.ckpt")
            if epoch % config.checkpoint_every == 0:
                save_checkpoint(ck, out / "checkpoint.ckpt")
        log.debug("epoch %d loss %.6f val %.6f", epoch, row["train_loss"], val.total)
    if out is not None:
        save_checkpoint(ck, out / "checkpoint.ckpt")
        write_log(ck.history, out / "train_log.csv")
    return ck


def write_log(history, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]])


# ------------------------------------------------------------------ checkpoints


def _tensors(ck: Checkpoint):
    items = [(f"param/{k}", v) for k, v in ck.params.items()]
    items += [(f"adam_m/{k}", v) for k, v in ck.adam.m.items()]
    items += [(f"adam_v/{k}", v) for k, v in ck.adam.v.items()]
    return items


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    """Serialized checkpoint: magic, header length, JSON header, float64 LE data."""
    directory, chunks, offset = [], [], 0
    for name, arr in _tensors(ck):
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    data = b"".join(chunks)
    header = {
        "version": CHECKPOINT_VERSION,
        "hyperparams": ck.hp.to_dict(),
        "config": ck.config.to_dict(),
        "tensors": directory,
        "data_length": len(data),
        "data_sha256": hashlib.sha256(data).hexdigest(),
        "adam_step": ck.adam.step,
        "epoch": ck.epoch,
        "rng_state": ck.rng_state,
        "history": ck.history,
        "best_val": ck.best_val if math.isfinite(ck.best_val) else None,
        "since_best": ck.since_best,
        "stopped": ck.stopped,
        "max_seq_len": ck.max_seq_len,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + data


def save_checkpoint(ck: Checkpoint, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ck))
    tmp.replace(path)


def checkpoint_from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointIntegrityError("not a checkpoint file (bad magic or truncated)")
    (hlen,) = struct.unpack_from("<Q", blob, len(MAGIC))
    start = len(MAGIC) + 8
    if len(blob) < start + hlen:
        raise CheckpointIntegrityError("checkpoint header is truncated")
    try:
        header = json.loads(blob[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"corrupted checkpoint header: {exc}") from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {header.get('version')!r} is incompatible with {CHECKPOINT_VERSION}"
        )
    data = blob[start + hlen :]
    if len(data) != header["data_length"]:
        raise CheckpointIntegrityError(f"expected {header['data_length']} data bytes, found {len(data)}")
    if hashlib.sha256(data).hexdigest() != header["data_sha256"]:
        raise CheckpointIntegrityError("checkpoint data checksum mismatch")
    arrays = {}
    for item in header["tensors"]:
        count = int(np.prod(item["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=item["offset"])
        arrays[item["name"]] = arr.astype(np.float64).reshape(item["shape"])
    adam = AdamState()
    adam.step = header["adam_step"]
    params = {}
    for name, arr in arrays.items():
        kind, key = name.split("/", 1)
        {"param": params, "adam_m": adam.m, "adam_v": adam.v}[kind][key] = arr
    best = header["best_val"]
    return Checkpoint(
        HyperParams.from_dict(header["hyperparams"]),
        params,
        adam,
        header["epoch"],
        header["rng_state"],
        TrainConfig.from_dict(header["config"]),
        header["history"],
        math.inf if best is None else best,
        header["since_best"],
        header["stopped"],
        header["max_seq_len"],
    )


def load_checkpoint(path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())


def config_fields() -> dict[str, type]:
    """Flat config keys accepted for training: TrainConfig and HyperParams names."""
    out = {f.name: f.type for f in fields(TrainConfig) if f.name != "spots"}
    out.update({f.name: f.type for f in fields(HyperParams) if f.name not in ("vocab", "spots", "beta")})
    return out
