"""Reverse-mode automatic differentiation over dense numpy arrays.

The engine is deliberately small. A Tensor wraps an ndarray; when any input
of an operation requires gradients, the output remembers its parents plus a
closure that routes the output gradient back to them. Graphs are built per
forward pass and garbage-collected afterwards. Leaf tensors keep their
accumulated ``.grad`` across backward calls until the caller resets it.

Values are float32 by default; float64 is supported throughout for the
tight gradient-check suites.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (fast evaluation path).

    Process-wide switch, not per-thread; concurrent graph building and
    no_grad evaluation must not be interleaved across threads.
    """
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_push")

    def __init__(self, data, requires_grad: bool = False, dtype=None, *,
                 op: str = "leaf", parents: tuple = (), push=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._push = push

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self.dtype), -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, op={self.op!r})"


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _node(data, parents: tuple, push, op: str) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, op=op, parents=parents, push=push)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} are not broadcastable")

    def push(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), push, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} are not broadcastable")

    def push(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(out, (a, b), push, "mul")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def push(g):
        return (g * s,)

    return _node(a.data * s, (a,), push, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2] \
            or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    out = a.data @ b.data

    def push(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _node(out, (a, b), push, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w.T + b for weights stored (out_dim, in_dim)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1] \
            or b.shape != (w.shape[0],):
        raise ShapeError(
            f"linear: x {x.shape}, w {w.shape}, b {b.shape} are incompatible")
    out = x.data @ w.data.T
    out += b.data

    def push(g):
        return g @ w.data, g.T @ x.data, g.sum(axis=0)

    return _node(out, (x, w, b), push, "linear")


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def push(g):
        return (g * (a.data > 0),)

    return _node(out, (a,), push, "relu")


_GELU_C0 = 0.7978845608028654  # sqrt(2/pi)
_GELU_C1 = 0.044715


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = a.data
    u = x * x
    u *= x
    u *= _GELU_C1
    u += x
    u *= _GELU_C0
    t = np.tanh(u, out=u)
    out = 1.0 + t
    out *= x
    out *= 0.5

    def push(g):
        du = x * x
        du *= 3.0 * _GELU_C1
        du += 1.0
        du *= _GELU_C0
        du *= 1.0 - t * t
        du *= x
        du += 1.0 + t
        du *= 0.5
        du *= g
        return (du,)

    return _node(out, (a,), push, "gelu")


def softmax_lastdim(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row softmax over the last dimension.

    `mask`, when given, is a constant additive bias (e.g. -1e9 on padded
    keys) applied before normalization; it broadcasts against `a`.
    """
    z = a.data + mask if mask is not None else a.data.copy()
    z -= z.max(axis=-1, keepdims=True)
    s = np.exp(z, out=z)
    s /= s.sum(axis=-1, keepdims=True)

    def push(g):
        gx = g * s
        gx -= s * gx.sum(axis=-1, keepdims=True)
        return (gx,)

    return _node(s, (a,), push, "softmax")


def layer_norm_lastdim(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last dimension to zero mean, unit variance (pre-affine)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def push(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _node(y, (a,), push, "layer_norm")


def layer_norm_affine(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """layer_norm_lastdim followed by the elementwise affine `y * gain + bias`."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm_affine: gain {gain.shape} / bias {bias.shape} do not match width {d}")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    y = x - mu
    var = (y * y).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y *= inv
    out = y * gain.data
    out += bias.data

    def push(g):
        lead = tuple(range(g.ndim - 1))
        gb = g.sum(axis=lead)
        gg = (g * y).sum(axis=lead)
        gy = g * gain.data
        gm = gy.mean(axis=-1, keepdims=True)
        gyy = (gy * y).mean(axis=-1, keepdims=True)
        gy -= gm
        gy -= y * gyy
        gy *= inv
        return gy, gg, gb

    return _node(out, (a, gain, bias), push, "layer_norm_affine")


def embedding_gather(table: Tensor, ids) -> Tensor:
    """Select rows of `table` by integer index array `ids`."""
    idx = np.asarray(ids)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError(f"embedding_gather: ids must be integers, got {idx.dtype}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding_gather: id out of range for table of {table.shape[0]} rows")
    out = table.data[idx]

    def push(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _node(out, (table,), push, "gather")


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ValueError("concat: need at least one tensor")
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: shapes {[p.shape for p in parts]} do not align on axis {axis}")
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def push(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tuple(parts), push, "concat")


def cross_entropy_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy, log-sum-exp stabilized.

    `logits` is (C,) with an int label or (B, C) with a length-B label array.
    """
    z = logits.data
    if z.ndim == 1:
        zz = z[None, :]
        lab = np.asarray([labels], dtype=np.int64)
    elif z.ndim == 2:
        zz = z
        lab = np.asarray(labels, dtype=np.int64)
        if lab.shape != (z.shape[0],):
            raise ShapeError(
                f"cross_entropy: labels shape {lab.shape} does not match batch {z.shape[0]}")
    else:
        raise ShapeError(f"cross_entropy: logits must be 1- or 2-d, got {z.shape}")
    n, c = zz.shape
    if lab.size and (lab.min() < 0 or lab.max() >= c):
        raise ValueError(f"cross_entropy: label out of range for {c} classes")
    m = zz.max(axis=-1, keepdims=True)
    e = np.exp(zz - m)
    se = e.sum(axis=-1, keepdims=True)
    lse = (m + np.log(se))[:, 0]
    nll = lse - zz[np.arange(n), lab]
    out = np.asarray(nll.mean(), dtype=z.dtype)

    def push(g):
        p = e / se
        p[np.arange(n), lab] -= 1.0
        gz = p * (np.asarray(g) / n)
        return (gz.reshape(z.shape).astype(z.dtype, copy=False),)

    return _node(out, (logits,), push, "cross_entropy")


def reduce_mean(a: Tensor, axis=None) -> Tensor:
    out = a.data.mean(axis=axis)
    if axis is None:
        count = a.data.size

        def push(g):
            return (np.broadcast_to(np.asarray(g) / count, a.shape).astype(a.dtype, copy=False),)
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))

        def push(g):
            ge = np.expand_dims(g, axes)
            return (np.broadcast_to(ge / count, a.shape).astype(a.dtype, copy=False),)

    return _node(np.asarray(out), (a,), push, "reduce_mean")


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)
    if axis is None:
        def push(g):
            return (np.broadcast_to(np.asarray(g), a.shape).astype(a.dtype, copy=False),)
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)

        def push(g):
            ge = np.expand_dims(g, axes)
            return (np.broadcast_to(ge, a.shape).astype(a.dtype, copy=False),)

    return _node(np.asarray(out), (a,), push, "reduce_sum")


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def push(g):
        return (g.reshape(a.shape),)

    return _node(out, (a,), push, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def push(g):
        return (np.transpose(g, inverse),)

    return _node(out, (a,), push, "transpose")


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p <= 0."""
    if p <= 0.0:
        return a
    mask = (rng.random(a.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return mul(a, Tensor(mask))


_PRIMITIVES: dict = {}


def primitive_forward(kind: str, inputs: list, **kwargs) -> Tensor:
    """Dispatch a primitive by name.

    `inputs` mixes Tensors with the occasional integer index array
    (gather ids, cross-entropy labels). The activation slot accepts both
    "relu" and "gelu".
    """
    if kind not in _PRIMITIVES:
        raise ValueError(f"unknown primitive kind: {kind!r}")
    return _PRIMITIVES[kind](inputs, kwargs)


_PRIMITIVES.update({
    "matmul": lambda ins, kw: matmul(ins[0], ins[1]),
    "linear": lambda ins, kw: linear(ins[0], ins[1], ins[2]),
    "add": lambda ins, kw: add(ins[0], ins[1]),
    "mul": lambda ins, kw: mul(ins[0], ins[1]),
    "scale": lambda ins, kw: scale(ins[0], ins[1] if len(ins) > 1 else kw["factor"]),
    "relu": lambda ins, kw: relu(ins[0]),
    "gelu": lambda ins, kw: gelu(ins[0]),
    "softmax_lastdim": lambda ins, kw: softmax_lastdim(ins[0], **kw),
    "layer_norm_lastdim": lambda ins, kw: layer_norm_lastdim(ins[0], **kw),
    "layer_norm_affine": lambda ins, kw: layer_norm_affine(ins[0], ins[1], ins[2], **kw),
    "embedding_gather": lambda ins, kw: embedding_gather(ins[0], ins[1]),
    "concat": lambda ins, kw: concat(ins, **kw),
    "cross_entropy_with_logits": lambda ins, kw: cross_entropy_with_logits(ins[0], ins[1]),
    "reduce_mean": lambda ins, kw: reduce_mean(ins[0], **kw),
    "reduce_sum": lambda ins, kw: reduce_sum(ins[0], **kw),
    "reshape": lambda ins, kw: reshape(ins[0], kw["shape"]),
    "transpose": lambda ins, kw: transpose(ins[0], kw["axes"]),
})

PRIMITIVE_KINDS = tuple(sorted(_PRIMITIVES))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _toposort(root: Tensor) -> list:
    order: list = []
    seen: set = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, leaves: Iterable[Tensor] | None = None) -> dict:
    """Accumulate dL/dleaf into each leaf's .grad via the chain rule.

    Repeated calls accumulate; resetting grads is the caller's job. Leaves
    not reachable from the loss get a zero gradient in the returned map.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar-shaped, got shape {loss.shape}")
    if loss.requires_grad:
        flows: dict = {id(loss): np.ones_like(loss.data)}
        for node in reversed(_toposort(loss)):
            g = flows.pop(id(node), None)
            if g is None:
                continue
            if node.op == "leaf":
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, contrib in zip(node._parents, node._push(g)):
                if contrib is None or not parent.requires_grad:
                    continue
                held = flows.get(id(parent))
                flows[id(parent)] = contrib if held is None else held + contrib
    if leaves is None:
        return {}
    return {leaf: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
            for leaf in leaves}


def grad_check(f: Callable[[Tensor], Tensor], point, step: float) -> float:
    """Max relative disagreement between reverse-mode and central differences.

    Per-coordinate step h_i = step * (1 + |x_i|); the error metric is
    |analytic - central| / (|analytic| + |central| + 1e-12), maximized over
    coordinates of `point`.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    x0 = np.array(point.data if isinstance(point, Tensor) else point)
    leaf = Tensor(x0.copy(), requires_grad=True)
    out = f(leaf)
    if out.data.size != 1:
        raise ShapeError(f"grad_check: f must be scalar-valued, got shape {out.shape}")
    if not np.isfinite(out.data):
        raise ValueError("grad_check: f(point) is not finite")
    analytic = backward(out, [leaf])[leaf].reshape(-1)

    worst = 0.0
    flat = x0.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            h = step * (1.0 + abs(float(flat[i])))
            xp = x0.copy()
            xp.reshape(-1)[i] += h
            xm = x0.copy()
            xm.reshape(-1)[i] -= h
            fp = float(f(Tensor(xp)).data)
            fm = float(f(Tensor(xm)).data)
            central = (fp - fm) / (2.0 * h)
            a = float(analytic[i])
            err = abs(a - central) / (abs(a) + abs(central) + 1e-12)
            worst = max(worst, err)
    return worst
