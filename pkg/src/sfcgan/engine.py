"""Minimal reverse-mode autodiff over numpy arrays.

Only the operators the translation networks and their losses need are
provided. Every op records a closure that maps the output gradient to input
gradients; :func:`backward` walks the recorded graph in reverse topological
order.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import kernels

_GRAD_ENABLED = True
_KINK_TAPE: "_KinkTape | None" = None


class _KinkTape:
    """Branch masks of piecewise ops, recorded once and replayed.

    Finite differences taken with replayed masks stay on the smooth piece
    that contains the base point instead of straddling a kink.
    """

    def __init__(self):
        self.masks: list[np.ndarray] = []
        self.pos = 0
        self.replaying = False

    def mask(self, compute: Callable[[], np.ndarray]) -> np.ndarray:
        if not self.replaying:
            m = compute()
            self.masks.append(m)
            return m
        m = self.masks[self.pos]
        self.pos += 1
        return m


def _branch(compute: Callable[[], np.ndarray]) -> np.ndarray:
    return compute() if _KINK_TAPE is None else _KINK_TAPE.mask(compute)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording a graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _pair(a, b):
    ta = a if isinstance(a, Tensor) else None
    tb = b if isinstance(b, Tensor) else None
    ref = ta if ta is not None else tb
    if ta is None:
        ta = Tensor(np.asarray(a, dtype=ref.dtype))
    if tb is None:
        tb = Tensor(np.asarray(b, dtype=ref.dtype))
    return ta, tb


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw)


def power(a: Tensor, exponent: float) -> Tensor:
    return _make(a.data ** exponent, (a,),
                 lambda g: (g * exponent * a.data ** (exponent - 1),))


def tabs(a: Tensor) -> Tensor:
    sign = _branch(lambda: np.sign(a.data))
    return _make(a.data * sign, (a,), lambda g: (g * sign,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = _branch(lambda: (a.data >= lo) & (a.data <= hi))
    out = np.where(inside, a.data, np.clip(a.data, lo, hi))
    return _make(out, (a,), lambda g: (g * inside,))


def relu(a: Tensor) -> Tensor:
    pos = _branch(lambda: a.data > 0)
    return _make(a.data * pos, (a,), lambda g: (g * pos,))


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    pos = _branch(lambda: a.data > 0)
    slope = pos.astype(a.dtype)
    slope *= 1.0 - alpha
    slope += alpha
    return _make(a.data * slope, (a,), lambda g: (g * slope,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(a.dtype)
    return _make(out, (a,), lambda g: (g * out * (1 - out),))


def activation(x: Tensor, kind: str, alpha: float = 0.2) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------- reductions/shape

def tsum(a: Tensor, axis=None) -> Tensor:
    out = np.sum(a.data, axis=axis)

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.data.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return tsum(a, axis) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a: Tensor, index) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        full[index] += g
        return (full,)

    return _make(np.array(a.data[index]), (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weights + bias`` for a (B, F) input."""
    if x.data.ndim != 2 or weights.data.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ValueError(f"dense shape mismatch: input {x.shape}, weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ValueError(f"dense bias shape {bias.shape} does not match {weights.shape[1]} outputs")
    return matmul(x, weights) + bias


# ---------------------------------------------------------------- convolution

def _bmm(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``w @ x[b]`` for every batch entry, one 2-D GEMM each.

    Broadcast ``np.matmul`` falls off the BLAS path for a single output
    channel, which costs 20x on the final conv.
    """
    if w.shape[1] == 1:
        # rank-1 product: GEMM with k=1 is pathologically slow, broadcasting is exact
        return w[None, :, :] * x
    out = np.empty((x.shape[0], w.shape[0], x.shape[2]), dtype=np.result_type(w, x))
    for b in range(x.shape[0]):
        np.matmul(w, x[b], out=out[b])
    return out


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0, bias: Tensor | None = None) -> Tensor:
    """Cross-correlation of a (B, C, H, W) input with an (O, C, K, K) kernel, zero padding."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError("conv2d expects 4-D input and kernel")
    nb, nc, h, w = x.shape
    no, ki, k, k2 = kernel.shape
    if ki != nc:
        raise ValueError(f"conv2d channel mismatch: input has {nc}, kernel expects {ki}")
    if k != k2:
        raise ValueError("conv2d kernel must be square")
    oh, ow = _conv_out(h, k, stride, pad), _conv_out(w, k, stride, pad)
    if oh <= 0 or ow <= 0:
        raise ValueError(f"conv2d output size {oh}x{ow} is not positive")
    cols = kernels.im2col(x.data, k, stride, pad, oh, ow)
    w2 = kernel.data.reshape(no, nc * k * k)
    out = _bmm(w2, cols)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = out.reshape(nb, no, oh, ow)

    def bw(g):
        g3 = g.reshape(nb, no, oh * ow)
        gk = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0)
        dx = None
        if x.requires_grad:
            dcols = _bmm(w2.T, g3)
            dx = kernels.col2im(dcols, nc, h, w, k, stride, pad, oh, ow)
        grads = (dx, gk.reshape(kernel.shape))
        if bias is not None:
            grads += (g3.sum(axis=(0, 2)),)
        return grads

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, bw)


def conv_transpose2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0,
                     bias: Tensor | None = None) -> Tensor:
    """Adjoint of :func:`conv2d` for the same (C_in_conv, C_out_conv, K, K)-shaped kernel.

    ``x`` has ``kernel.shape[0]`` channels; output has ``kernel.shape[1]``
    channels and spatial size ``(H - 1) * stride - 2 * pad + K``.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError("conv_transpose2d expects 4-D input and kernel")
    nb, nc, h, w = x.shape
    ci, co, k, k2 = kernel.shape
    if ci != nc:
        raise ValueError(f"conv_transpose2d channel mismatch: input has {nc}, kernel expects {ci}")
    if k != k2:
        raise ValueError("conv_transpose2d kernel must be square")
    oh, ow = (h - 1) * stride - 2 * pad + k, (w - 1) * stride - 2 * pad + k
    if oh <= 0 or ow <= 0:
        raise ValueError(f"conv_transpose2d output size {oh}x{ow} is not positive")
    w2 = kernel.data.reshape(ci, co * k * k)
    x3 = x.data.reshape(nb, nc, h * w)
    cols = _bmm(w2.T, x3)
    out = kernels.col2im(cols, co, oh, ow, k, stride, pad, h, w)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bw(g):
        gcols = kernels.im2col(g, k, stride, pad, h, w)
        dx = _bmm(w2, gcols).reshape(x.shape) if x.requires_grad else None
        gk = np.matmul(x3, gcols.transpose(0, 2, 1)).sum(axis=0)
        grads = (dx, gk.reshape(kernel.shape))
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, bw)


# ---------------------------------------------------------------- correlation

def pearson(x: Tensor, y: Tensor, axis) -> Tensor:
    """Pearson correlation reduced over ``axis``; zero-variance slices give r = 0."""
    x, y = _pair(x, y)
    if x.shape != y.shape:
        raise ValueError(f"pearson shape mismatch: {x.shape} vs {y.shape}")
    cx = x.data - x.data.mean(axis=axis, keepdims=True)
    cy = y.data - y.data.mean(axis=axis, keepdims=True)
    sxx = (cx * cx).sum(axis=axis, keepdims=True)
    syy = (cy * cy).sum(axis=axis, keepdims=True)
    sxy = (cx * cy).sum(axis=axis, keepdims=True)
    tiny = np.finfo(x.dtype).tiny
    valid = (sxx > tiny) & (syy > tiny)
    den = np.sqrt(np.where(valid, sxx * syy, 1))
    r = np.where(valid, sxy / den, 0).astype(x.dtype)
    safe_sxx = np.where(valid, sxx, 1)
    safe_syy = np.where(valid, syy, 1)

    def bw(g):
        g = np.expand_dims(g, axis) if np.ndim(g) < cx.ndim else g
        gx = np.where(valid, cy / den - r * cx / safe_sxx, 0) * g
        gy = np.where(valid, cx / den - r * cy / safe_syy, 0) * g
        return gx.astype(x.dtype), gy.astype(y.dtype)

    return _make(np.squeeze(r, axis=axis), (x, y), bw)


# ---------------------------------------------------------------- backward

def backward(loss: Tensor, params: "ParamSet | None" = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.astype(node.dtype) if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    if params is not None:
        for p in params.values():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------- parameters / Adam

class ParamSet(dict):
    """Named leaf tensors; insertion order fixes serialization order."""

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True)
        self[name] = t
        return t

    def zero_grad(self) -> None:
        for p in self.values():
            p.grad = None

    def prefixed(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}{k}": v for k, v in self.items()}


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParamSet) -> "AdamState":
        return cls(m={k: np.zeros_like(p.data) for k, p in params.items()},
                   v={k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params: ParamSet, state: AdamState, lr: float, weight_decay: float = 0.0) -> None:
    """Bias-corrected Adam with decoupled weight decay; zeroes gradients afterwards."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if weight_decay:
            p.data -= lr * weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None


# ---------------------------------------------------------------- gradient check

def grad_check(fn: Callable[[], Tensor], tensors: dict[str, Tensor], eps: float = 1e-3,
               coords: int | None = None, seed: int = 0, freeze_kinks: bool = True) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn`` rebuilds the scalar from the current contents of ``tensors``. With
    ``coords`` set, that many entries per tensor are sampled (seeded) instead
    of checking every entry. ``freeze_kinks`` replays the base point's
    relu/abs/clip branch masks during the perturbed evaluations.
    """
    global _KINK_TAPE
    for t in tensors.values():
        t.grad = None
        t.requires_grad = True
    tape = _KinkTape() if freeze_kinks else None
    _KINK_TAPE = tape
    try:
        loss = fn()
    finally:
        _KINK_TAPE = None
    backward(loss)
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy() for k, t in tensors.items()}
    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for name, t in tensors.items():
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if coords is not None and coords < flat.size:
                idx = np.sort(rng.choice(flat.size, size=coords, replace=False))
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                fp = _replay(fn, tape)
                flat[i] = orig - eps
                fm = _replay(fn, tape)
                flat[i] = orig
                num = (fp - fm) / (2 * eps)
                ana = float(analytic[name].reshape(-1)[i])
                scale = max(abs(num), abs(ana))
                if scale == 0.0:
                    continue
                worst = max(worst, abs(num - ana) / scale)
    for t in tensors.values():
        t.grad = None
    return worst


def _replay(fn: Callable[[], Tensor], tape: _KinkTape | None) -> float:
    global _KINK_TAPE
    if tape is None:
        return float(fn().data)
    tape.replaying, tape.pos = True, 0
    _KINK_TAPE = tape
    try:
        return float(fn().data)
    finally:
        _KINK_TAPE = None
