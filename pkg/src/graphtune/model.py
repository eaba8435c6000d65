"""The sequence CVAE: LSTM encoder to (mu, log-variance), LSTM decoder to five heads.

Sequences are processed as padded batches of shape ``(T, B, width)`` with a
``(T, B)`` mask. Masked steps freeze the recurrent state and carry zero loss
weight, so a batch computes exactly the per-sequence losses averaged.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .dfscode import Vocabulary, to_one_hot
from .errors import ConfigError, ShapeError

HEADS = ("t_u", "t_v", "l_u", "l_e", "l_v")
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class ConditionSpots:
    """Where the condition vector enters the network."""

    on_encoder_input: bool = True
    on_decoder_input: bool = True
    on_decoder_hidden_init: bool = True

    @classmethod
    def parse(cls, text: str) -> "ConditionSpots":
        """``"e,d,h"`` style flag list; ``"none"`` or ``""`` disables all spots."""
        text = text.strip().lower()
        if text in ("", "none"):
            flags = set()
        elif text == "all":
            flags = {"e", "d", "h"}
        else:
            flags = {f.strip() for f in text.split(",") if f.strip()}
        unknown = flags - {"e", "d", "h"}
        if unknown:
            raise ConfigError(f"unknown condition spot(s) {sorted(unknown)}; use e, d, h")
        return cls("e" in flags, "d" in flags, "h" in flags)

    def label(self) -> str:
        return ",".join(f for f, on in zip("edh", asdict(self).values()) if on) or "none"


@dataclass(frozen=True)
class HyperParams:
    vocab: Vocabulary
    condition_dim: int = 10
    enc_layers: int = 2
    enc_hidden: int = 223
    enc_embed: int = 227
    latent_dim: int = 10
    dec_layers: int = 3
    dec_hidden: int = 250
    dec_embed: int = 250
    sos_dim: int = 250
    beta: float = 3.0
    spots: ConditionSpots = field(default_factory=ConditionSpots)
    # the network sees (C - cond_shift) / cond_scale; the identity by default
    cond_shift: float = 0.0
    cond_scale: float = 1.0

    def __post_init__(self):
        for name in ("condition_dim", "enc_layers", "enc_hidden", "enc_embed", "latent_dim",
                     "dec_layers", "dec_hidden", "dec_embed", "sos_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.beta < 0:
            raise ConfigError(f"beta must be nonnegative, got {self.beta}")
        if not self.cond_scale > 0:
            raise ConfigError(f"cond_scale must be positive, got {self.cond_scale}")
        if self.sos_dim != self.dec_embed:
            # SOS stands in for an embedded tuple at the first decoder step
            raise ConfigError(f"sos_dim ({self.sos_dim}) must equal dec_embed ({self.dec_embed})")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vocab"] = self.vocab.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        d = dict(d)
        d["vocab"] = Vocabulary(**d["vocab"])
        d["spots"] = ConditionSpots(**d.get("spots", {}))
        return cls(**d)


# ------------------------------------------------------------------ parameters


def param_shapes(hp: HyperParams) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every trainable tensor, in a fixed order."""
    w, c, s = hp.vocab.width, hp.condition_dim, hp.spots
    shapes: dict[str, tuple[int, ...]] = {}

    def lin(name, n_in, n_out):
        shapes[f"{name}.W"] = (n_in, n_out)
        shapes[f"{name}.b"] = (n_out,)

    def lstm(name, n_in, hid, layers):
        for k in range(layers):
            shapes[f"{name}.{k}.wx"] = (n_in if k == 0 else hid, 4 * hid)
            shapes[f"{name}.{k}.wh"] = (hid, 4 * hid)
            shapes[f"{name}.{k}.b"] = (4 * hid,)

    lin("enc_emb", w + (c if s.on_encoder_input else 0), hp.enc_embed)
    lstm("enc", hp.enc_embed, hp.enc_hidden, hp.enc_layers)
    lin("mu", hp.enc_hidden, hp.latent_dim)
    lin("log_var", hp.enc_hidden, hp.latent_dim)
    dec_cond = c if s.on_decoder_input else 0
    lin("dsos", hp.latent_dim + dec_cond, hp.sos_dim)
    if s.on_decoder_hidden_init:
        lin("dinit", c, hp.dec_hidden)
    lin("demb", w, hp.dec_embed)
    lstm("dec", hp.dec_embed + hp.latent_dim + dec_cond, hp.dec_hidden, hp.dec_layers)
    for head, size in zip(HEADS, hp.vocab.sizes):
        lin(f"head_{head}", hp.dec_hidden, size)
    return shapes


def init_params(hp: HyperParams, seed: int) -> dict[str, np.ndarray]:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(hp).items():
        if len(shape) == 2:
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            b = np.zeros(shape)
            if name.endswith(".b") and name.count(".") == 2:  # LSTM gate bias
                hid = shape[0] // 4
                b[hid : 2 * hid] = 1.0
            params[name] = b
    return params


# ------------------------------------------------------------------ batches


@dataclass
class Batch:
    x: np.ndarray  # (T, B, width) one-hot, zero padded
    mask: np.ndarray  # (T, B)
    lengths: np.ndarray  # (B,)
    cond: np.ndarray  # (B, condition_dim)


def make_batch(codes, conditions, vocab: Vocabulary, condition_dim: int) -> Batch:
    """Pad one-hot sequences (EOS row included) into a time-major batch."""
    seqs = [to_one_hot(c, vocab) for c in codes]
    lengths = np.array([len(s) for s in seqs])
    T, B = int(lengths.max()), len(seqs)
    x = np.zeros((T, B, vocab.width))
    mask = np.zeros((T, B))
    for b, s in enumerate(seqs):
        x[: len(s), b] = s
        mask[: len(s), b] = 1.0
    cond = np.repeat(np.asarray(conditions, dtype=np.float64).reshape(-1, 1), condition_dim, axis=1)
    return Batch(x, mask, lengths, cond)


def _check_batch(hp: HyperParams, x: np.ndarray, cond: np.ndarray):
    if x.ndim != 3 or x.shape[-1] != hp.vocab.width:
        raise ShapeError(f"sequence width {x.shape[-1:]} does not match vocabulary width {hp.vocab.width}")
    if cond.shape != (x.shape[1], hp.condition_dim):
        raise ShapeError(f"condition shape {cond.shape} does not match ({x.shape[1]}, {hp.condition_dim})")


# ------------------------------------------------------------------ forward


def _stack(p, prefix, layers, xs, h0, c0, mask):
    out = xs
    last_h = []
    for k in range(layers):
        out, h, _ = ad.lstm_layer(out, h0, c0, p[f"{prefix}.{k}.wx"], p[f"{prefix}.{k}.wh"], p[f"{prefix}.{k}.b"], mask)
        last_h.append(h)
    return out, last_h[-1]


def _scaled(hp: HyperParams, cond: np.ndarray) -> np.ndarray:
    if hp.cond_shift == 0.0 and hp.cond_scale == 1.0:
        return cond
    return (cond - hp.cond_shift) / hp.cond_scale


def encode(p: dict, hp: HyperParams, x: np.ndarray, mask: np.ndarray, cond: np.ndarray):
    """Batched encoder; returns ``(mu, log_var)`` tensors of shape ``(B, latent)``.

    ``p`` maps names to tensors (see ``as_tensors``).
    """
    _check_batch(hp, x, cond)
    cond = _scaled(hp, cond)
    T, B, _ = x.shape
    inp = ad.Tensor(x)
    if hp.spots.on_encoder_input:
        inp = ad.concat([inp, ad.Tensor(np.broadcast_to(cond, (T, B, hp.condition_dim)))])
    emb = ad.dense(inp, p["enc_emb.W"], p["enc_emb.b"])
    zeros = ad.Tensor(np.zeros((B, hp.enc_hidden)))
    _, h_last = _stack(p, "enc", hp.enc_layers, emb, zeros, zeros, mask)
    return ad.dense(h_last, p["mu.W"], p["mu.b"]), ad.dense(h_last, p["log_var.W"], p["log_var.b"])


def _dec_context(p, hp: HyperParams, z: ad.Tensor, cond: np.ndarray):
    """Per-sequence decoder side input, SOS embedding, and initial hidden state."""
    B = z.shape[0]
    cond = _scaled(hp, cond)
    ctx = ad.concat([z, ad.Tensor(cond)]) if hp.spots.on_decoder_input else z
    sos = ad.dense(ctx, p["dsos.W"], p["dsos.b"])
    if hp.spots.on_decoder_hidden_init:
        h0 = ad.dense(ad.Tensor(cond), p["dinit.W"], p["dinit.b"])
    else:
        h0 = ad.Tensor(np.zeros((B, hp.dec_hidden)))
    return ctx, sos, h0


def _head_params(p):
    W = ad.concat([p[f"head_{h}.W"] for h in HEADS])
    b = ad.concat([p[f"head_{h}.b"] for h in HEADS])
    return W, b


def _log_probs(p, hp: HyperParams, hs: ad.Tensor):
    """Log of the five per-component softmaxes, laid out like the one-hot rows."""
    W, b = _head_params(p)
    logits = ad.dense(hs, W, b)
    parts = []
    for off, size in zip(hp.vocab.offsets, hp.vocab.sizes):
        parts.append(ad.log(ad.softmax(ad.slice_last(logits, off, off + size)), floor=LOG_FLOOR))
    return ad.concat(parts)


def decode_teacher_forced(p: dict, hp: HyperParams, x: np.ndarray, mask: np.ndarray, z: ad.Tensor, cond: np.ndarray):
    """Log-probabilities ``(T, B, width)``; row ``j`` predicts tuple ``j`` of ``x``.

    The decoder sees SOS at step 0 and the ground-truth tuple ``j - 1`` at step ``j``.
    """
    _check_batch(hp, x, cond)
    T, B, _ = x.shape
    if z.shape != (B, hp.latent_dim):
        raise ShapeError(f"latent shape {z.shape} does not match ({B}, {hp.latent_dim})")
    ctx, sos, h0 = _dec_context(p, hp, z, cond)
    steps = [ad.stack([sos])]
    if T > 1:
        steps.append(ad.dense(ad.Tensor(x[:-1]), p["demb.W"], p["demb.b"]))
    emb = ad.concat(steps, axis=0) if len(steps) > 1 else steps[0]
    inp = ad.concat([emb, ad.repeat_leading(ctx, T)])
    c0 = ad.Tensor(np.zeros((B, hp.dec_hidden)))
    hs, _ = _stack(p, "dec", hp.dec_layers, inp, h0, c0, mask)
    return _log_probs(p, hp, hs)


# ------------------------------------------------------------------ losses


def kl_divergence(mu, log_var) -> np.ndarray:
    """Per-row KL(N(mu, exp(log_var)) || N(0, I)) on plain arrays."""
    mu, log_var = np.asarray(mu, dtype=np.float64), np.asarray(log_var, dtype=np.float64)
    return -0.5 * np.sum(1.0 + log_var - mu * mu - np.exp(log_var), axis=-1)


def kl_loss(mu: ad.Tensor, log_var: ad.Tensor) -> ad.Tensor:
    """Batch-mean KL divergence to the standard normal prior."""
    B = mu.shape[0] if mu.data.ndim == 2 else 1
    inner = ad.sub(ad.add(log_var, 1.0), ad.add(ad.mul(mu, mu), ad.exp(log_var)))
    return ad.scale(ad.sum_all(inner), -0.5 / B)


def reconstruction_loss(log_probs: ad.Tensor, x: np.ndarray, mask: np.ndarray) -> ad.Tensor:
    """Per-position summed cross-entropy, averaged over each sequence, then over the batch."""
    lengths = mask.sum(axis=0)
    weight = -x * (mask / (lengths * x.shape[1]))[:, :, None]
    return ad.sum_all(ad.mul(log_probs, weight))


def total_loss(kl, recon, beta: float):
    """``beta * kl + recon`` for floats or tensors."""
    if isinstance(kl, ad.Tensor) or isinstance(recon, ad.Tensor):
        return ad.add(ad.scale(ad.as_tensor(kl), beta), recon)
    return beta * kl + recon


def as_tensors(params: dict[str, np.ndarray], requires_grad: bool = False) -> dict[str, ad.Tensor]:
    # tensors share memory with the arrays, so in-place optimiser updates are visible
    return {k: ad.Tensor(v, requires_grad=requires_grad, name=k) for k, v in params.items()}


@dataclass
class LossParts:
    total: float
    kl: float
    recon: float


def batch_loss(tp: dict, hp: HyperParams, batch: Batch, noise: np.ndarray):
    """Forward pass of one batch; returns ``(loss tensor, LossParts)``."""
    mu, log_var = encode(tp, hp, batch.x, batch.mask, batch.cond)
    z = ad.gaussian_reparam(mu, log_var, noise)
    logp = decode_teacher_forced(tp, hp, batch.x, batch.mask, z, batch.cond)
    kl = kl_loss(mu, log_var)
    recon = reconstruction_loss(logp, batch.x, batch.mask)
    loss = total_loss(kl, recon, hp.beta)
    return loss, LossParts(float(loss.data), float(kl.data), float(recon.data))


def loss_and_grads(params: dict[str, np.ndarray], hp: HyperParams, batch: Batch, noise: np.ndarray):
    """Loss parts and gradient arrays for every parameter."""
    tp = as_tensors(params, requires_grad=True)
    with ad.Tape() as tape:
        loss, parts = batch_loss(tp, hp, batch, noise)
    got = ad.backward(tape, loss)
    grads = {k: got.get(t, np.zeros_like(t.data)) for k, t in tp.items()}
    return parts, grads


# ------------------------------------------------------------------ generation step


class DecoderState:
    """Incremental decoder for one sequence (no tape, plain forward)."""

    def __init__(self, params: dict[str, np.ndarray], hp: HyperParams, z: np.ndarray, cond: np.ndarray):
        self.p = as_tensors(params)
        self.hp = hp
        z = ad.Tensor(np.asarray(z, dtype=np.float64).reshape(1, -1))
        cond = np.asarray(cond, dtype=np.float64).reshape(1, -1)
        _check_batch(hp, np.zeros((1, 1, hp.vocab.width)), cond)
        self.ctx, sos, h0 = _dec_context(self.p, hp, z, cond)
        self.h = [h0] * hp.dec_layers
        self.c = [ad.Tensor(np.zeros((1, hp.dec_hidden)))] * hp.dec_layers
        self.W, self.b = _head_params(self.p)
        self._advance(sos)

    def _advance(self, emb: ad.Tensor):
        out = ad.concat([emb, self.ctx])
        for k in range(self.hp.dec_layers):
            p = self.p
            self.h[k], self.c[k] = ad.lstm_cell(out, self.h[k], self.c[k], p[f"dec.{k}.wx"], p[f"dec.{k}.wh"], p[f"dec.{k}.b"])
            out = self.h[k]

    def distributions(self) -> list[np.ndarray]:
        """The five head softmaxes at the current step."""
        logits = (self.h[-1].data @ self.W.data + self.b.data)[0]
        out = []
        for off, size in zip(self.hp.vocab.offsets, self.hp.vocab.sizes):
            out.append(ad.softmax(ad.Tensor(logits[off : off + size])).data)
        return out

    def feed(self, symbols) -> None:
        """Advance with a sampled tuple given as five component indices."""
        row = np.zeros((1, self.hp.vocab.width))
        for off, s in zip(self.hp.vocab.offsets, symbols):
            row[0, off + int(s)] = 1.0
        self._advance(ad.dense(ad.Tensor(row), self.p["demb.W"], self.p["demb.b"]))
