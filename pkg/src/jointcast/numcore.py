"""Dense tensors with reverse-mode automatic differentiation.

A deliberately small engine: every operation builds a node holding its
parents and a closure mapping the output gradient to parent gradients.
``backward`` walks the graph once in reverse topological order. Only
first-order gradients are supported.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np

DEBUG = os.environ.get("JOINTCAST_DEBUG", "") not in ("", "0")
_grad_enabled = True


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A tensor holds NaN or Inf."""


def set_debug(flag: bool) -> None:
    global DEBUG
    DEBUG = bool(flag)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_float_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    arr = np.array(data, dtype=dtype, copy=True)
    if dtype is None and arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return arr


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {where}")


class Tensor:
    """Dense real array with optional gradient tracking.

    Leaf tensors reject NaN/Inf at construction. Outputs of operations are
    checked only when debug mode is on.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "op", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        arr = _as_float_array(data, dtype)
        if arr.ndim == 0:
            arr = arr.reshape(())
        _check_finite(arr, "construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn = None
        self.op = "leaf"
        self.name = name

    @classmethod
    def _make(cls, data: np.ndarray, parents: tuple, grad_fn, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = ""
        out.op = op
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = parents if track else ()
        out._grad_fn = grad_fn if track else None
        if DEBUG:
            _check_finite(data, op)
        return out

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._make(self.data, (), None, "detach")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self, retain_graph: bool = False) -> None:
        backward(self, retain_graph=retain_graph)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._make(np.asarray(x, dtype=like.dtype), (), None, "const")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data - b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    ad, bd = a.data, b.data
    return Tensor._make(ad * bd, (a, b),
                        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
                        "mul")


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    ad, bd = a.data, b.data
    out = ad / bd
    return Tensor._make(out, (a, b),
                        lambda g: (_unbroadcast(g / bd, ad.shape),
                                   _unbroadcast(-g * out / bd, bd.shape)),
                        "div")


def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return Tensor._make(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),), "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,), "exp")


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor._make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = 0.5 * (1.0 + np.tanh(0.5 * x))
    return Tensor._make(x * s, (a,), lambda g: (g * (s + x * s * (1.0 - s)),), "silu")


def where(cond, a, b) -> Tensor:
    """Select ``a`` where ``cond`` holds, else ``b``; ``cond`` is constant."""
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    c = np.asarray(cond, dtype=bool)
    sa, sb = a.shape, b.shape
    return Tensor._make(np.where(c, a.data, b.data), (a, b),
                        lambda g: (_unbroadcast(np.where(c, g, 0), sa),
                                   _unbroadcast(np.where(c, 0, g), sb)),
                        "where")


# -- reductions and shape ops -------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), grad_fn, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor._make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
    return transpose(a, tuple(axes))


def index(a: Tensor, idx) -> Tensor:
    shape, dtype = a.shape, a.dtype

    def grad_fn(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(np.array(a.data[idx]), (a,), grad_fn, "index")


def take(a: Tensor, indices, axis: int) -> Tensor:
    """Gather slices along ``axis``; repeated indices accumulate gradient."""
    ind = np.asarray(indices, dtype=np.intp)
    shape, dtype = a.shape, a.dtype
    ax = axis % a.ndim

    def grad_fn(g):
        full = np.zeros(shape, dtype=dtype)
        moved = np.moveaxis(full, ax, 0)
        np.add.at(moved, ind, np.moveaxis(g, ax, 0))
        return (full,)

    return Tensor._make(np.take(a.data, ind, axis=ax), (a,), grad_fn, "take")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    ax = axis % tensors[0].ndim
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return Tensor._make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors),
                        lambda g: tuple(np.split(g, sizes, axis=ax)), "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ax = axis % (tensors[0].ndim + 1)
    return Tensor._make(np.stack([t.data for t in tensors], axis=ax), tuple(tensors),
                        lambda g: tuple(np.moveaxis(g, ax, 0)), "stack")


# -- linear algebra and model primitives --------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy broadcasting over leading dimensions.

    Gradients follow dA = dC·Bᵀ and dB = Aᵀ·dC, reduced over broadcast axes.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return Tensor._make(ad @ bd, (a, b), grad_fn, "matmul")


def softmax_lastdim(t: Tensor) -> Tensor:
    z = t.data - t.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return Tensor._make(y, (t,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),),
                        "softmax")


def rms_norm(t: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """``t / sqrt(mean(t**2) + eps) * gain`` over the last dimension."""
    if gain.shape != (t.shape[-1],):
        raise DimensionError(f"gain shape {gain.shape} does not match last dim {t.shape[-1]}")
    x, gd = t.data, gain.data
    d = x.shape[-1]
    r = 1.0 / np.sqrt((x * x).mean(axis=-1, keepdims=True) + eps)
    xhat = x * r

    def grad_fn(g):
        u = g * gd
        gx = r * u - xhat * (r * r * (u * x).sum(axis=-1, keepdims=True) / d)
        gg = (g * xhat).reshape(-1, d).sum(axis=0)
        return gx, gg

    return Tensor._make(xhat * gd, (t, gain), grad_fn, "rms_norm")


def swiglu_ffn(x: Tensor, w_gate: Tensor, w_up: Tensor, w_down: Tensor) -> Tensor:
    """``(silu(x·w_gate) * (x·w_up)) · w_down``."""
    if w_gate.shape != w_up.shape or w_down.shape != w_gate.shape[::-1]:
        raise DimensionError(
            f"swiglu weight shapes inconsistent: {w_gate.shape}, {w_up.shape}, {w_down.shape}")
    return matmul(silu(matmul(x, w_gate)) * matmul(x, w_up), w_down)


def _rope_tables(positions, d: int, base: float, dtype):
    pos = np.asarray(positions, dtype=np.float64)
    inv = base ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    ang = pos[:, None] * inv[None, :]
    return np.cos(ang).astype(dtype), np.sin(ang).astype(dtype)


def rope_apply(t: Tensor, positions, base: float = 10000.0) -> Tensor:
    """Rotate consecutive pairs of the last dimension by ``pos * base**(-2i/d)``.

    ``positions`` holds one integer per token; tokens run along axis -2.
    """
    d = t.shape[-1]
    if d % 2:
        raise DimensionError(f"rotary embedding needs an even last dimension, got {d}")
    if len(positions) != t.shape[-2]:
        raise DimensionError(f"{len(positions)} positions for {t.shape[-2]} tokens")
    cos, sin = _rope_tables(positions, d, base, t.dtype)

    def rotate(x, s):
        ev, od = x[..., 0::2], x[..., 1::2]
        out = np.empty_like(x)
        out[..., 0::2] = ev * cos - od * s
        out[..., 1::2] = ev * s + od * cos
        return out

    return Tensor._make(rotate(t.data, sin), (t,), lambda g: (rotate(g, -sin),), "rope")


# -- backward -----------------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Populate ``.grad`` on every tracked leaf reachable from ``loss``.

    Leaf gradients accumulate across calls. The graph is released afterwards
    unless ``retain_graph`` is set.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any tensor requiring grad")
    order = _topo(loss)
    if any(n._grad_fn is None and n._parents for n in order):
        raise RuntimeError("graph already released; call backward with retain_graph=True")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._grad_fn(g)):
            if not p.requires_grad or pg is None:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg
        if not retain_graph:
            node._grad_fn = None
