"""Minimal reverse-mode differentiation over dense numpy arrays.

Only the operators the feature network and its losses need are provided.
Arrays keep their dtype (float32 for the network, float64 for gradient
checks); full reductions accumulate in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import NumericError, ShapeError


class Tensor:
    """A value in the computation graph plus its accumulated gradient."""

    __slots__ = ("value", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, *, _parents=(), _backward=None, op="leaf"):
        value = np.asarray(value)
        if not np.issubdtype(value.dtype, np.floating):
            value = value.astype(np.float64)
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.value)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if grad is None:
            if self.value.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.value)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.asarray(grad, dtype=self.value.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.shape).astype(parent.dtype, copy=False)
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _node(value, parents, backward, op) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"{op} produced non-finite values")
    req = any(p.requires_grad for p in parents)
    return Tensor(value, req, _parents=tuple(parents), _backward=backward if req else None, op=op)


def _check_finite(x: Tensor, op: str):
    if not np.all(np.isfinite(x.value)):
        raise NumericError(f"{op} received non-finite input")


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value * b.value, (a, b), lambda g: (g * b.value, g * a.value), "mul")


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = x.dtype.type(c)
    return _node(x.value * c, (x,), lambda g: (g * c,), "scale")


def square(x) -> Tensor:
    x = as_tensor(x)
    return _node(x.value * x.value, (x,), lambda g: (2.0 * g * x.value,), "square")


def relu(x) -> Tensor:
    x = as_tensor(x)
    _check_finite(x, "relu")
    pos = x.value > 0
    return _node(np.where(pos, x.value, 0).astype(x.dtype), (x,), lambda g: (g * pos,), "relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    _check_finite(x, "sigmoid")
    s = expit(x.value)
    return _node(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def log(x, floor: float = 1e-12) -> Tensor:
    """``log(max(x, floor))``; the gradient is zero where the floor is active."""
    x = as_tensor(x)
    _check_finite(x, "log")
    live = x.value > floor
    safe = np.where(live, x.value, floor)
    return _node(np.log(safe), (x,), lambda g: (np.where(live, g / safe, 0.0),), "log")


def sign_ste(x) -> Tensor:
    """Hard sign (+1 at zero) with the straight-through backward ``g * 1{|x| <= 1}``."""
    x = as_tensor(x)
    out = np.where(x.value >= 0, 1, -1).astype(x.dtype)
    window = np.abs(x.value) <= 1
    return _node(out, (x,), lambda g: (g * window,), "sign_ste")


# ----------------------------------------------------------------- reductions

def sum_(x, axis=None) -> Tensor:
    """Sum; a full reduction accumulates in float64."""
    x = as_tensor(x)
    if axis is None:
        out = np.asarray(np.sum(x.value, dtype=np.float64))
        return _node(out, (x,), lambda g: (np.broadcast_to(g, x.shape),), "sum")
    out = np.sum(x.value, axis=axis)

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape),)

    return _node(out, (x,), back, "sum_axis")


# ------------------------------------------------------------ shape / gather

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _node(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def take_rows(x, idx) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)

    def back(g):
        out = np.zeros_like(x.value)
        np.add.at(out, idx, g)
        return (out,)

    return _node(x.value[idx], (x,), back, "take_rows")


def stack(xs) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    return _node(np.stack([x.value for x in xs]), tuple(xs), lambda g: tuple(g), "stack")


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    c, h, w = a.shape
    return a.reshape(c // (r * r), r, r, h, w).transpose(0, 3, 1, 4, 2).reshape(c // (r * r), h * r, w * r)


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    c, h, w = a.shape
    return a.reshape(c, h // r, r, w // r, r).transpose(0, 2, 4, 1, 3).reshape(c * r * r, h // r, w // r)


def pixel_shuffle(x, r: int) -> Tensor:
    """(C*r*r, H, W) -> (C, H*r, W*r); channel ``i*r + j`` fills sub-pixel (i, j)."""
    x = as_tensor(x)
    if x.value.ndim != 3 or x.shape[0] % (r * r):
        raise ShapeError(f"pixel_shuffle needs channels divisible by {r * r}, got shape {x.shape}")
    return _node(_shuffle(x.value, r), (x,), lambda g: (_unshuffle(g, r),), "pixel_shuffle")


def pixel_unshuffle(x, r: int) -> Tensor:
    x = as_tensor(x)
    if x.value.ndim != 3 or x.shape[1] % r or x.shape[2] % r:
        raise ShapeError(f"pixel_unshuffle needs spatial dims divisible by {r}, got shape {x.shape}")
    return _node(_unshuffle(x.value, r), (x,), lambda g: (_shuffle(g, r),), "pixel_unshuffle")


def bilinear_sample(fmap, gx, gy) -> Tensor:
    """Sample a (C, Hg, Wg) map at grid coordinates; returns (N, C).

    Coordinates are clamped to the grid (edge replication).
    """
    fmap = as_tensor(fmap)
    c, hg, wg = fmap.shape
    gx = np.clip(np.asarray(gx, dtype=np.float64), 0, wg - 1)
    gy = np.clip(np.asarray(gy, dtype=np.float64), 0, hg - 1)
    x0 = np.minimum(np.floor(gx).astype(np.intp), max(wg - 2, 0))
    y0 = np.minimum(np.floor(gy).astype(np.intp), max(hg - 2, 0))
    x1 = np.minimum(x0 + 1, wg - 1)
    y1 = np.minimum(y0 + 1, hg - 1)
    ax = gx - x0
    ay = gy - y0
    taps = [
        (y0 * wg + x0, (1 - ax) * (1 - ay)),
        (y0 * wg + x1, ax * (1 - ay)),
        (y1 * wg + x0, (1 - ax) * ay),
        (y1 * wg + x1, ax * ay),
    ]
    flat = fmap.value.reshape(c, hg * wg).T
    dt = fmap.dtype
    out = sum(flat[i] * w.astype(dt)[:, None] for i, w in taps)

    def back(g):
        d = np.zeros((hg * wg, c), dtype=np.float64)
        for i, w in taps:
            np.add.at(d, i, g * w[:, None])
        return (d.T.reshape(c, hg, wg),)

    return _node(out.astype(dt, copy=False), (fmap,), back, "bilinear_sample")


# ---------------------------------------------------------------- convolution

def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of a (Cin, H, W) input with (Cout, Cin, kh, kw) weights."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.value.ndim != 3 or weight.value.ndim != 4 or weight.shape[1] != x.shape[0]:
        raise ShapeError(f"conv2d shape mismatch: input {x.shape}, weight {weight.shape}")
    cout, cin, kh, kw = weight.shape
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv2d bias shape {bias.shape} does not match weight {weight.shape}")
    _, h, w = x.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty: input {x.shape}, weight {weight.shape}")

    xp = np.pad(x.value, ((0, 0), (padding, padding), (padding, padding))) if padding else x.value
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    cols = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(ho * wo, cin * kh * kw)
    wmat = weight.value.reshape(cout, -1)
    out = (cols @ wmat.T).T.reshape(cout, ho, wo)
    if bias is not None:
        out = out + bias.value[:, None, None]

    def back(g):
        g2 = g.reshape(cout, ho * wo)
        gw = (g2 @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(1, 2)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2.T @ wmat).reshape(ho, wo, cin, kh, kw)
            dxp = np.zeros(xp.shape, dtype=np.result_type(g, wmat))
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += (
                        dcols[:, :, :, i, j].transpose(2, 0, 1)
                    )
            gx = dxp[:, padding : padding + h, padding : padding + w] if padding else dxp
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, back, "conv2d")


# ---------------------------------------------------------------------- ADAM

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """One bias-corrected ADAM update, applied in place to ``params[name].value``.

    All gradients are checked before anything is modified, so a non-finite
    gradient leaves parameters and state untouched.
    """
    if not state.lr > 0:
        raise ValueError(f"learning rate must be positive, got {state.lr}")
    for name, g in grads.items():
        if g is None:
            continue
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    state.step += 1
    bc1 = 1 - state.beta1 ** state.step
    bc2 = 1 - state.beta2 ** state.step
    for name, g in grads.items():
        if g is None:
            continue
        p = params[name]
        g = g.astype(np.float64)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(g.shape)
            state.v[name] = np.zeros(g.shape)
        v = state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        upd = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.value = (p.value - upd).astype(p.dtype)
    return params


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
