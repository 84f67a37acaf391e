"""Dense tensors with reverse-mode automatic differentiation.

Just enough of an engine for the models in this package: elementwise
arithmetic with broadcasting, (batched) matmul, relu, softmax, rms layer
norm, dropout, embedding/bias-table gathers, reductions, reshapes, and a
fused cross-entropy. The graph is recorded dynamically per forward pass;
`backward` walks it once from a scalar loss and accumulates `.grad` on
every reachable tensor that requires it.

Compute precision is float64 by default so finite-difference checks are
tight; pass float32 data (or build parameters with dtype="float32") to
trade accuracy for speed. Tensors are treated as immutable after
construction except for gradient accumulation.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import DimensionError, ParameterError

DEFAULT_DTYPE = np.float64

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (evaluation / finite-difference loops)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_vjps")

    def __init__(self, data, requires_grad: bool = False, dtype=None, _vjps=()):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        # sequence of (parent Tensor, vjp callable grad_out -> grad_parent)
        self._vjps = _vjps

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, vjps) -> Tensor:
    """Wrap an op result, recording vjps only when a parent needs them."""
    if _GRAD_ENABLED:
        live = tuple((p, fn) for p, fn in vjps if p.requires_grad or p._vjps)
        if live:
            return Tensor(data, requires_grad=True, _vjps=live)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- arithmetic --------------------------------------------------------


def _match_scalar_dtype(a: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Cast a constant 0-d operand to the array operand's dtype.

    Keeps python-float scalars from promoting float32 graphs to float64.
    Only untracked constants are cast, so gradients are unaffected.
    """

    def is_const(t: Tensor) -> bool:
        return t.data.ndim == 0 and not t.requires_grad and not t._vjps

    if is_const(a) and not is_const(b) and a.data.dtype != b.data.dtype:
        a = Tensor(a.data.astype(b.data.dtype))
    elif is_const(b) and not is_const(a) and b.data.dtype != a.data.dtype:
        b = Tensor(b.data.astype(a.data.dtype))
    return a, b


def add(a, b) -> Tensor:
    a, b = _match_scalar_dtype(as_tensor(a), as_tensor(b))
    out = a.data + b.data
    return _result(out, (
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ))


def mul(a, b) -> Tensor:
    a, b = _match_scalar_dtype(as_tensor(a), as_tensor(b))
    out = a.data * b.data
    return _result(out, (
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim == 0 or b.data.ndim == 0:
        raise DimensionError("matmul requires at least 1-d operands")
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}"
        )
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(
            f"matmul batch dimensions incompatible: {a.data.shape} x {b.data.shape}"
        ) from exc

    def grad_a(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if b.data.ndim > 1 else np.multiply.outer(g, b.data)
        return _unbroadcast(ga, a.data.shape)

    def grad_b(g):
        if a.data.ndim > 1:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        else:
            gb = np.multiply.outer(a.data, g)
        return _unbroadcast(gb, b.data.shape)

    return _result(out, ((a, grad_a), (b, grad_b)))


def relu(x) -> Tensor:
    x = as_tensor(x)
    keep = x.data > 0
    return _result(np.where(keep, x.data, 0.0), ((x, lambda g: g * keep),))


# -- shape manipulation ------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.data.shape
    return _result(x.data.reshape(shape), ((x, lambda g: g.reshape(old)),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    out = np.transpose(x.data, axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))
    return _result(out, ((x, lambda g: np.transpose(g, inv)),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        return vjp

    return _result(out, tuple((t, make_vjp(i)) for i, t in enumerate(tensors)))


# -- reductions --------------------------------------------------------


def tsum(x, axis=None) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, x.data.shape).copy()
        ge = np.expand_dims(g, axis)
        return np.broadcast_to(ge, x.data.shape).copy()

    return _result(out, ((x, vjp),))


def tmean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis), x.data.dtype.type(1.0 / n))


# -- gathers -----------------------------------------------------------


def embedding(table, ids) -> Tensor:
    """Row gather: table [V, d], ids int array [...] -> [..., d]."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(
            f"token id out of range [0, {table.data.shape[0]}): got {int(ids.min())}..{int(ids.max())}"
        )
    out = table.data[ids]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return gt

    return _result(out, ((table, vjp),))


def bucket_bias(table, buckets) -> Tensor:
    """Gather per-head bias logits: table [H, B], buckets [n, m] -> [H, n, m]."""
    table = as_tensor(table)
    buckets = np.asarray(buckets, dtype=np.int64)
    out = table.data[:, buckets]

    def vjp(g):
        gt = np.zeros_like(table.data)
        for h in range(table.data.shape[0]):
            np.add.at(gt[h], buckets, g[h])
        return gt

    return _result(out, ((table, vjp),))


# -- normalization / activations with bespoke backward -----------------


def softmax(x, axis: int = -1) -> Tensor:
    """Stable softmax; rows that are entirely -inf come out uniform.

    Fully masked rows arise from padding/packing; a uniform output with a
    zeroed gradient keeps them from poisoning training.
    """
    x = as_tensor(x)
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ParameterError(f"softmax axis {axis} invalid for shape {x.data.shape}")
    m = np.max(x.data, axis=axis, keepdims=True)
    safe_m = np.where(np.isneginf(m), 0.0, m)
    e = np.exp(x.data - safe_m)
    s = e.sum(axis=axis, keepdims=True)
    dead = s == 0.0
    n = x.data.shape[axis]
    uniform = x.data.dtype.type(1.0 / n)
    p = np.where(dead, uniform, e / np.where(dead, x.data.dtype.type(1.0), s))

    def vjp(g):
        gx = p * (g - (g * p).sum(axis=axis, keepdims=True))
        if dead.any():
            gx = np.where(dead, 0.0, gx)
        return gx

    return _result(p, ((x, vjp),))


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    safe_m = np.where(np.isneginf(m), 0.0, m)
    shifted = x.data - safe_m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def vjp(g):
        return g - p * g.sum(axis=axis, keepdims=True)

    return _result(out, ((x, vjp),))


def rms_layer_norm(x, gain, epsilon: float = 1e-6) -> Tensor:
    """y = gain * x / sqrt(mean(x^2) + eps) over the last axis.

    Rescale only: no mean subtraction and no additive bias.
    """
    x, gain = as_tensor(x), as_tensor(gain)
    if gain.data.shape != (x.data.shape[-1],):
        raise DimensionError(
            f"gain shape {gain.data.shape} must match last dim of {x.data.shape}"
        )
    n = x.data.shape[-1]
    ms = np.mean(x.data * x.data, axis=-1, keepdims=True)
    r = 1.0 / np.sqrt(ms + epsilon)
    out = gain.data * x.data * r

    def grad_x(g):
        inner = (g * gain.data * x.data).sum(axis=-1, keepdims=True)
        return r * gain.data * g - (r ** 3 / n) * x.data * inner

    def grad_gain(g):
        gg = g * x.data * r
        return gg.reshape(-1, n).sum(axis=0)

    return _result(out, ((x, grad_x), (gain, grad_gain)))


def dropout(x, rate: float, rng, training: bool) -> Tensor:
    """Inverted dropout: zero with probability `rate`, scale by 1/(1-rate)."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return _result(x.data.copy(), ((x, lambda g: g),))
    keep = rng.random(x.data.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    mask = keep.astype(x.data.dtype) * scale
    return _result(x.data * mask, ((x, lambda g: g * mask),))


def cross_entropy(logits, target_ids, ignore_id: int | None = None) -> Tensor:
    """Mean negative log-likelihood over non-ignored positions.

    logits: [T, V]; target_ids: length-T int sequence. The backward pass
    is the classic softmax-minus-one-hot, divided by the count.
    """
    logits = as_tensor(logits)
    targets = np.asarray(list(target_ids), dtype=np.int64)
    if logits.data.ndim != 2 or targets.shape != (logits.data.shape[0],):
        raise DimensionError(
            f"cross_entropy expects logits [T, V] and T targets; got {logits.data.shape} and {targets.shape}"
        )
    vocab = logits.data.shape[1]
    live = np.ones(len(targets), dtype=bool) if ignore_id is None else targets != ignore_id
    if targets[live].size and (targets[live].min() < 0 or targets[live].max() >= vocab):
        raise IndexError(f"target id out of range [0, {vocab})")
    count = int(live.sum())
    if count == 0:
        return _result(np.asarray(0.0, dtype=logits.data.dtype), ((logits, lambda g: np.zeros_like(logits.data)),))

    m = logits.data.max(axis=1, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(len(targets))
    picked = np.where(live, logp[rows, np.where(live, targets, 0)], 0.0)
    loss = -picked.sum() / count

    def vjp(g):
        p = np.exp(logp)
        gl = p.copy()
        gl[rows[live], targets[live]] -= 1.0
        gl[~live] = 0.0
        return gl * (g / count)

    return _result(np.asarray(loss, dtype=logits.data.dtype), ((logits, vjp),))


# -- backward pass -----------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate .grad over the graph reachable from a scalar loss.

    Repeated calls accumulate gradients unless they were cleared.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward requires a scalar loss, got shape {loss.data.shape}")

    # Iterative topological order (graphs are deep; recursion would blow).
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._vjps:
            if id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.accumulate_grad(g)
        for parent, vjp in node._vjps:
            pg = vjp(g)
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg


def zero_grads(params) -> None:
    """Clear gradients on an iterable or dict of tensors."""
    values = params.values() if isinstance(params, dict) else params
    for t in values:
        t.zero_grad()
