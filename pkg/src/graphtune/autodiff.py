"""A small reverse-mode autodiff engine over float64 numpy arrays.

Operations executed inside a ``Tape`` context are recorded together with
their backward rules; ``backward(tape, loss)`` sweeps the tape in reverse and
accumulates gradients into leaf tensors created with ``requires_grad=True``.
Outside a tape the same functions simply compute forward values.

LSTM recurrences have fused kernels (``lstm_cell`` and ``lstm_layer``) with
hand-written backward passes; everything else is elementwise or affine.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, ShapeError

_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_from_op", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._from_op = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._from_op

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar keeps model code readable
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class _Op:
    __slots__ = ("name", "inputs", "outputs", "backward")

    def __init__(self, name, inputs, outputs, backward):
        self.name = name
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward


class Tape:
    """Ordered record of executed operations."""

    def __init__(self):
        self.ops: list[_Op] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.ops)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(name: str, inputs: Sequence[Tensor], outputs: Sequence[np.ndarray], backward: Callable):
    """Wrap raw outputs as tensors and record the op if anything needs a gradient."""
    track = bool(_TAPES) and any(t.requires_grad for t in inputs)
    outs = []
    for arr in outputs:
        t = Tensor(arr, requires_grad=track)
        t._from_op = True
        outs.append(t)
    if track:
        _TAPES[-1].ops.append(_Op(name, tuple(inputs), tuple(outs), backward))
    return outs


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(name, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


# ------------------------------------------------------------------ kernels


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        (g,) = g
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", (a, b), (a.data + b.data,), bw)[0]


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        (g,) = g
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _emit("sub", (a, b), (a.data - b.data,), bw)[0]


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        (g,) = g
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit("mul", (a, b), (a.data * b.data,), bw)[0]


def scale(a: Tensor, c: float) -> Tensor:
    def bw(g):
        return (g[0] * c,)

    return _emit("scale", (a,), (a.data * c,), bw)[0]


def matmul(a, b) -> Tensor:
    """``a @ b`` where ``b`` is 2-D and ``a`` has any leading batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        (g,) = g
        ga = g @ b.data.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if a.data.ndim == 1:
                gb = np.outer(a.data, g)
            else:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _emit("matmul", (a, b), (a.data @ b.data,), bw)[0]


def dense(x, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ W + b`` over the last axis."""
    x = as_tensor(x)
    if weight.data.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def bw(g):
        (g,) = g
        gx = g @ weight.data.T if x.requires_grad else None
        g2 = g.reshape(-1, g.shape[-1])
        gw = x.data.reshape(-1, x.shape[-1]).T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit("dense", inputs, (out,), bw)[0]


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g[0], sizes, axis=axis))

    return _emit("concat", ts, (out,), bw)[0]


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of the last axis."""
    if not 0 <= start <= stop <= a.shape[-1]:
        raise ShapeError(f"slice: [{start}:{stop}] out of range for {a.shape}")

    def bw(g):
        out = np.zeros_like(a.data)
        out[..., start:stop] = g[0]
        return (out,)

    return _emit("slice", (a,), (a.data[..., start:stop],), bw)[0]


def take(a: Tensor, index: int) -> Tensor:
    """``a[index]`` along the first axis."""
    if not -a.shape[0] <= index < a.shape[0]:
        raise ShapeError(f"take: index {index} out of range for {a.shape}")

    def bw(g):
        out = np.zeros_like(a.data)
        out[index] = g[0]
        return (out,)

    return _emit("take", (a,), (a.data[index],), bw)[0]


def stack(tensors: Sequence[Tensor]) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts])
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in ts]}") from None

    def bw(g):
        return tuple(g[0][i] for i in range(len(ts)))

    return _emit("stack", ts, (out,), bw)[0]


def repeat_leading(a: Tensor, times: int) -> Tensor:
    """Broadcast ``a`` to shape ``(times, *a.shape)``."""
    out = np.broadcast_to(a.data, (times,) + a.shape).copy()

    def bw(g):
        return (g[0].sum(axis=0),)

    return _emit("repeat", (a,), (out,), bw)[0]


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)

    def bw(g):
        return (g[0] * s * (1.0 - s),)

    return _emit("sigmoid", (a,), (s,), bw)[0]


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def bw(g):
        return (g[0] * (1.0 - t * t),)

    return _emit("tanh", (a,), (t,), bw)[0]


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)

    def bw(g):
        return (g[0] * e,)

    return _emit("exp", (a,), (e,), bw)[0]


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log; with ``floor > 0`` inputs are clamped from below first."""
    x = a.data
    if floor > 0.0:
        live = x > floor
        x = np.where(live, x, floor)
    else:
        live = None

    def bw(g):
        gx = g[0] / x
        if live is not None:
            gx = np.where(live, gx, 0.0)
        return (gx,)

    return _emit("log", (a,), (np.log(x),), bw)[0]


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        (g,) = g
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", (a,), (s,), bw)[0]


def sum_all(a: Tensor) -> Tensor:
    def bw(g):
        return (np.broadcast_to(g[0], a.shape).copy(),)

    return _emit("sum", (a,), (np.asarray(a.data.sum()),), bw)[0]


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def bw(g):
        return (np.full(a.shape, float(g[0]) / n),)

    return _emit("mean", (a,), (np.asarray(a.data.mean()),), bw)[0]


def gaussian_reparam(mu: Tensor, log_var: Tensor, noise) -> Tensor:
    """``mu + exp(log_var / 2) * noise`` with external standard-normal noise."""
    noise = np.asarray(noise, dtype=np.float64)
    if mu.shape != log_var.shape or mu.shape != noise.shape:
        raise ShapeError(f"reparam: shapes {mu.shape}, {log_var.shape}, {noise.shape} differ")
    sd = np.exp(0.5 * log_var.data)
    spread = sd * noise
    # underflowing sd (log_var -> -inf) degenerates to the mean exactly
    out = mu.data + np.where(sd > 0.0, spread, 0.0)

    def bw(g):
        (g,) = g
        return g, g * 0.5 * spread

    return _emit("reparam", (mu, log_var), (out,), bw)[0]


# ------------------------------------------------------------------ LSTM


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _check_lstm(name, x_dim, h, c, wx, wh, b):
    hid = wh.shape[0]
    if wx.shape != (x_dim, 4 * hid) or wh.shape != (hid, 4 * hid) or b.shape != (4 * hid,):
        raise ShapeError(
            f"{name}: weights {wx.shape}, {wh.shape}, {b.shape} do not fit input {x_dim} / hidden {hid}"
        )
    if h.shape[-1] != hid or c.shape != h.shape:
        raise ShapeError(f"{name}: state shapes {h.shape}, {c.shape} do not fit hidden {hid}")


def _cell_forward(a, c_prev, hid):
    i = _sigmoid(a[..., :hid])
    f = _sigmoid(a[..., hid : 2 * hid])
    gg = np.tanh(a[..., 2 * hid : 3 * hid])
    o = _sigmoid(a[..., 3 * hid :])
    c = f * c_prev + i * gg
    tc = np.tanh(c)
    return i, f, gg, o, c, tc, o * tc


def _cell_backward(dh, dc, cache, c_prev):
    i, f, gg, o, c, tc = cache
    dc = dc + dh * o * (1.0 - tc * tc)
    da = np.concatenate(
        [
            dc * gg * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - gg * gg),
            dh * tc * o * (1.0 - o),
        ],
        axis=-1,
    )
    return da, dc * f


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor, b: Tensor, mask=None):
    """One LSTM step; returns ``(h, c)``.

    Gates are packed ``[input, forget, cell, output]``. Rows where ``mask`` is 0
    keep their previous state unchanged.
    """
    _check_lstm("lstm_cell", x.shape[-1], h, c, wx, wh, b)
    hid = wh.shape[0]
    a = x.data @ wx.data + h.data @ wh.data + b.data
    i, f, gg, o, c_new, tc, h_new = _cell_forward(a, c.data, hid)
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64).reshape(-1, 1)
        h_out = m * h_new + (1.0 - m) * h.data
        c_out = m * c_new + (1.0 - m) * c.data
    else:
        m = None
        h_out, c_out = h_new, c_new

    def bw(g):
        dh_out, dc_out = g
        if m is None:
            dh, dc, dh_keep, dc_keep = dh_out, dc_out, 0.0, 0.0
        else:
            dh, dc = m * dh_out, m * dc_out
            dh_keep, dc_keep = (1.0 - m) * dh_out, (1.0 - m) * dc_out
        da, dc_prev = _cell_backward(dh, dc, (i, f, gg, o, c_new, tc), c.data)
        return (
            da @ wx.data.T,
            da @ wh.data.T + dh_keep,
            dc_prev + dc_keep,
            np.atleast_2d(x.data).T @ np.atleast_2d(da),
            np.atleast_2d(h.data).T @ np.atleast_2d(da),
            da.reshape(-1, da.shape[-1]).sum(axis=0),
        )

    h_t, c_t = _emit("lstm_cell", (x, h, c, wx, wh, b), (h_out, c_out), bw)
    return h_t, c_t


def lstm_layer(xs: Tensor, h0: Tensor, c0: Tensor, wx: Tensor, wh: Tensor, b: Tensor, mask=None):
    """Run one LSTM layer over ``xs`` of shape ``(T, B, in)``.

    Returns ``(hs, h_last, c_last)`` with ``hs`` of shape ``(T, B, hidden)``.
    ``mask`` of shape ``(T, B)`` freezes the state of finished sequences, so
    ``h_last`` holds each row's state after its own final step.
    """
    if xs.data.ndim != 3:
        raise ShapeError(f"lstm_layer: expected (T, B, in) input, got {xs.shape}")
    _check_lstm("lstm_layer", xs.shape[-1], h0, c0, wx, wh, b)
    steps, batch, _ = xs.shape
    hid = wh.shape[0]
    if h0.shape != (batch, hid):
        raise ShapeError(f"lstm_layer: initial state {h0.shape} does not fit batch {batch} / hidden {hid}")
    ax = xs.data @ wx.data + b.data
    whd = wh.data
    m = None if mask is None else np.asarray(mask, dtype=np.float64)[:, :, None]
    # steps where every row is live need no state blending
    full = [True] * steps if m is None else [bool(m[t].all()) for t in range(steps)]
    hs = np.empty((steps, batch, hid))
    h_prev_all = np.empty((steps, batch, hid))
    c_prev_all = np.empty((steps, batch, hid))
    acts = np.empty((steps, batch, 4 * hid))  # i, f, g, o after their nonlinearities
    tcs = np.empty((steps, batch, hid))
    h, c = h0.data, c0.data
    for t in range(steps):
        h_prev_all[t] = h
        c_prev_all[t] = c
        a = ax[t] + h @ whd
        act = acts[t]
        np.tanh(0.5 * a, out=act)
        act += 1.0
        act *= 0.5
        act[:, 2 * hid : 3 * hid] = np.tanh(a[:, 2 * hid : 3 * hid])
        c_new = act[:, hid : 2 * hid] * c + act[:, :hid] * act[:, 2 * hid : 3 * hid]
        tc = np.tanh(c_new, out=tcs[t])
        h_new = act[:, 3 * hid :] * tc
        if full[t]:
            h, c = h_new, c_new
        else:
            h = m[t] * h_new + (1.0 - m[t]) * h
            c = m[t] * c_new + (1.0 - m[t]) * c
        hs[t] = h

    def bw(g):
        dhs, dh_last, dc_last = g
        da_all = np.empty((steps, batch, 4 * hid))
        dh = dh_last.copy()
        dc = dc_last.copy()
        whT = whd.T
        for t in range(steps - 1, -1, -1):
            dh = dh + dhs[t]
            if full[t]:
                dh_in, dc_in = dh, dc
            else:
                mt = m[t]
                dh_in, dc_in = mt * dh, mt * dc
            act, tc = acts[t], tcs[t]
            i, f, gg, o = act[:, :hid], act[:, hid : 2 * hid], act[:, 2 * hid : 3 * hid], act[:, 3 * hid :]
            dcc = dc_in + dh_in * o * (1.0 - tc * tc)
            da = da_all[t]
            da[:, :hid] = dcc * gg * i * (1.0 - i)
            da[:, hid : 2 * hid] = dcc * c_prev_all[t] * f * (1.0 - f)
            da[:, 2 * hid : 3 * hid] = dcc * i * (1.0 - gg * gg)
            da[:, 3 * hid :] = dh_in * tc * o * (1.0 - o)
            if full[t]:
                dh = da @ whT
                dc = dcc * f
            else:
                dh = da @ whT + (1.0 - mt) * dh
                dc = dcc * f + (1.0 - mt) * dc
        flat = da_all.reshape(-1, 4 * hid)
        dxs = da_all @ wx.data.T if xs.requires_grad else None
        dwx = xs.data.reshape(-1, xs.shape[-1]).T @ flat
        dwh = h_prev_all.reshape(-1, hid).T @ flat
        return dxs, dh, dc, dwx, dwh, flat.sum(axis=0)

    out_hs, h_last, c_last = _emit("lstm_layer", (xs, h0, c0, wx, wh, b), (hs, h.copy(), c.copy()), bw)
    return out_hs, h_last, c_last


# ------------------------------------------------------------------ backward


def backward(tape: Tape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse sweep from a scalar ``loss``.

    Gradients are added into ``.grad`` of every leaf that requires one, so two
    calls without zeroing accumulate. Returns this call's leaf gradients.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if loss.is_leaf and loss.requires_grad:
        leaves[id(loss)] = loss
    for op in reversed(tape.ops):
        gouts = [grads.get(id(o)) for o in op.outputs]
        if all(g is None for g in gouts):
            continue
        gouts = [np.zeros_like(o.data) if g is None else g for o, g in zip(op.outputs, gouts)]
        gins = op.backward(gouts)
        for inp, gi in zip(op.inputs, gins):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
            if inp.is_leaf:
                leaves[key] = inp
    out = {}
    for key, t in leaves.items():
        g = grads[key]
        if g.shape != t.shape:
            g = _unbroadcast(g, t.shape).reshape(t.shape)
        t.grad = g.copy() if t.grad is None else t.grad + g
        out[t] = g
    return out


# ------------------------------------------------------------------ optimisation


class AdamState:
    def __init__(self):
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    b1, b2 = betas
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if not np.isfinite(total):
        raise DivergenceError("non-finite gradient norm")
    if total > max_norm > 0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total
