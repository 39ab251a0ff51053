"""Dense tensors with reverse-mode automatic differentiation.

Arrays are contiguous row-major numpy buffers in float32 or float64.
Every op records its inputs and a backward rule; `backward()` walks the
recorded graph once in reverse topological order and accumulates adjoints
into the `.grad` buffers of tensors that require gradients.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray

_DTYPES = {32: np.float32, 64: np.float64}


def np_dtype(precision: int) -> np.dtype:
    """Map a precision in bits (32 or 64) to the numpy scalar type."""
    try:
        return np.dtype(_DTYPES[precision])
    except KeyError:
        raise ValueError(f"precision must be 32 or 64, got {precision}") from None


class Tensor:
    """A dense array plus an optional gradient accumulator.

    Leaf tensors created with ``requires_grad=True`` get a zero gradient
    buffer up front; it is only ever added to (call ``zero_grad`` to reset).
    Tensors produced by ops carry references to their inputs so the graph
    can be replayed backward.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data: Array = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = (
            np.zeros_like(self.data) if self.requires_grad else None
        )
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], Sequence[Array | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    def accumulate_grad(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Operator sugar; the module-level functions are the actual ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: Array, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum an adjoint over the axes numpy broadcasting introduced."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --------------------------------------------------------------------------
# Multiply-accumulate instrumentation
# --------------------------------------------------------------------------

class MacCounter:
    """Counts multiply-accumulates performed by matmul / elementwise mul."""

    def __init__(self):
        self.total = 0

    def add(self, n: int) -> None:
        self.total += int(n)


_ACTIVE_MACS: MacCounter | None = None


@contextmanager
def count_macs():
    """Count forward-pass MACs of the ops run inside the block."""
    global _ACTIVE_MACS
    prev = _ACTIVE_MACS
    counter = MacCounter()
    _ACTIVE_MACS = counter
    try:
        yield counter
    finally:
        _ACTIVE_MACS = prev


def _record_macs(n: int) -> None:
    if _ACTIVE_MACS is not None:
        _ACTIVE_MACS.add(n)


# --------------------------------------------------------------------------
# Primitive ops
# --------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def bwd(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    return _make(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def bwd(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.shape) if b.requires_grad else None,
        )

    return _make(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data
    _record_macs(data.size)

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return _make(data, (a, b), bwd)


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    data = a.data * s

    def bwd(g):
        return (g * s if a.requires_grad else None,)

    return _make(data, (a,), bwd)


def matmul(a, b) -> Tensor:
    """Matrix product. Operands are (..., M, K) and (..., K, N); batch
    dimensions broadcast. dL/da = g @ b^T and dL/db = a^T @ g."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: operands must be at least 2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner extents disagree: {a.shape} @ {b.shape}")
    data = a.data @ b.data
    _record_macs(data.size * a.shape[-1])

    def bwd(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(data, (a, b), bwd)


def transpose(a, axes: tuple[int, ...] | None = None) -> Tensor:
    """Permute axes; default swaps the last two."""
    a = _as_tensor(a)
    if axes is None:
        data = np.swapaxes(a.data, -1, -2)

        def bwd(g):
            return (np.swapaxes(g, -1, -2),)
    else:
        inverse = np.argsort(axes)
        data = np.transpose(a.data, axes)

        def bwd(g):
            return (np.transpose(g, inverse),)

    return _make(data, (a,), bwd)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    data = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(old),)

    return _make(data, (a,), bwd)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0)

    def bwd(g):
        return (g * (a.data > 0),)

    return _make(data, (a,), bwd)


def narrow_last(a, length: int) -> Tensor:
    """First `length` entries along the last axis."""
    a = _as_tensor(a)
    if not 0 < length <= a.shape[-1]:
        raise ValueError(f"narrow_last: length {length} out of range for shape {a.shape}")
    data = np.ascontiguousarray(a.data[..., :length])
    full = a.shape[-1]

    def bwd(g):
        gp = np.zeros(g.shape[:-1] + (full,), dtype=g.dtype)
        gp[..., :length] = g
        return (gp,)

    return _make(data, (a,), bwd)


def pad_last(a, length: int) -> Tensor:
    """Zero-pad the last axis up to `length`."""
    a = _as_tensor(a)
    cur = a.shape[-1]
    if length < cur:
        raise ValueError(f"pad_last: target {length} shorter than last extent of {a.shape}")
    data = np.zeros(a.shape[:-1] + (length,), dtype=a.data.dtype)
    data[..., :cur] = a.data

    def bwd(g):
        return (np.ascontiguousarray(g[..., :cur]),)

    return _make(data, (a,), bwd)


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    data = np.asarray(a.data.sum(), dtype=a.data.dtype).reshape(())

    def bwd(g):
        return (np.broadcast_to(g, a.shape).astype(a.data.dtype, copy=False),)

    return _make(data, (a,), bwd)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    return scale(sum_all(a), 1.0 / a.data.size)


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis, stabilized by row-max subtraction."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        return (data * (g - dot),)

    return _make(data, (a,), bwd)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize each row (last axis) to zero mean / unit variance, then
    apply the elementwise affine `gain * xhat + bias`."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    if eps <= 0:
        raise ValueError(f"layer_norm: eps must be positive, got {eps}")
    n = a.shape[-1]
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gain.data + bias.data

    def bwd(g):
        ga = ggain = gbias = None
        lead = tuple(range(g.ndim - 1))
        if gain.requires_grad:
            ggain = (g * xhat).sum(axis=lead)
        if bias.requires_grad:
            gbias = g.sum(axis=lead)
        if a.requires_grad:
            gx = g * gain.data
            ga = (inv / n) * (
                n * gx
                - gx.sum(axis=-1, keepdims=True)
                - xhat * (gx * xhat).sum(axis=-1, keepdims=True)
            )
        return ga, ggain, gbias

    return _make(data, (a, gain, bias), bwd)


def embedding(table, ids: Array) -> Tensor:
    """Row lookup: ids (...,) int -> vectors (..., d)."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValueError(f"embedding: ids must be integers, got dtype {ids.dtype}")
    data = np.ascontiguousarray(table.data[ids])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make(data, (table,), bwd)


def cross_entropy(logits, targets: Array) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits).

    logits (..., V), targets (...) -> scalar. Fused with softmax for
    numerical stability; backward is (softmax - onehot) / count.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ValueError(
            f"cross_entropy: targets shape {targets.shape} does not match logits {logits.shape}"
        )
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    flat_logp = logp.reshape(-1, logp.shape[-1])
    flat_t = targets.reshape(-1)
    count = flat_t.size
    picked = flat_logp[np.arange(count), flat_t]
    data = np.asarray(-picked.mean(), dtype=logits.data.dtype).reshape(())

    def bwd(g):
        probs = np.exp(logp)
        gl = probs.reshape(-1, probs.shape[-1]).copy()
        gl[np.arange(count), flat_t] -= 1.0
        gl *= float(g) / count
        return (gl.reshape(logits.shape).astype(logits.data.dtype, copy=False),)

    return _make(data, (logits,), bwd)


def dropout(a, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with a deterministic, caller-seeded generator.
    rate 0 returns the input unchanged."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    a = _as_tensor(a)
    if rate == 0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype)
    keep /= 1.0 - rate
    return mul(a, Tensor(keep))


# --------------------------------------------------------------------------
# Backward traversal
# --------------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate dloss/dt into `.grad` of every reachable tensor that
    requires gradients. Repeated calls (without zeroing) add up."""
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    # Per-pass adjoints live in a side table so that calling backward twice
    # adds exactly the same contribution twice.
    adjoint: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.accumulate_grad(g)
            continue
        if node.grad is not None:
            node.grad += g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoint:
                adjoint[key] += pg
            else:
                adjoint[key] = np.asarray(pg, dtype=parent.data.dtype).copy()


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()
