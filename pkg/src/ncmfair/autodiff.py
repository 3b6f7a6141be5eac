"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

The op set is deliberately closed: affine maps (matmul/add), tanh, relu,
elementwise arithmetic, reductions, reshapes, concatenation, row-wise
Euclidean norms, and the kernel ops defined in :mod:`ncmfair.kernels`.
Anything else must be composed from these or fail loudly.  Every op checks
its output for NaN/Inf and raises :class:`NumericsError` naming the op, so
a diverging training run is reported at the first bad intermediate.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError, NumericsError


def _check_finite(data: np.ndarray, op: str) -> None:
    # Fast path: a single reduction.  NaN/Inf propagate into the sum; a
    # finite-but-overflowing sum is disambiguated by the exact check.
    if not np.isfinite(np.sum(data)) and not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite values produced by op '{op}'")


class Tensor:
    """A node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    # -- graph construction -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- backward pass ------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar; accumulates into ``.grad``."""
        if self.data.shape != ():
            raise ArgumentError("backward() requires a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    # First contribution may alias g (backward closures never mutate their
    # inputs); later contributions allocate.
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# -- elementwise ops ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data + b.data
    _check_finite(data, "add")

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return Tensor(data, _parents=(a, b), _backward=bwd)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data - b.data
    _check_finite(data, "sub")

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return Tensor(data, _parents=(a, b), _backward=bwd)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data * b.data
    _check_finite(data, "mul")

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(data, _parents=(a, b), _backward=bwd)


def square(a) -> Tensor:
    a = _lift(a)
    data = a.data * a.data
    _check_finite(data, "square")

    def bwd(g):
        _accumulate(a, 2.0 * a.data * g)

    return Tensor(data, _parents=(a,), _backward=bwd)


def tanh(a) -> Tensor:
    a = _lift(a)
    data = np.tanh(a.data)
    _check_finite(data, "tanh")

    def bwd(g):
        _accumulate(a, (1.0 - data * data) * g)

    return Tensor(data, _parents=(a,), _backward=bwd)


def relu(a) -> Tensor:
    a = _lift(a)
    data = np.maximum(a.data, 0.0)
    _check_finite(data, "relu")

    def bwd(g):
        _accumulate(a, (a.data > 0.0) * g)

    return Tensor(data, _parents=(a,), _backward=bwd)


# -- linear algebra ----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product; 2-D classic or stacked 3-D with equal batch dims."""
    a, b = _lift(a), _lift(b)
    if a.data.ndim not in (2, 3) or b.data.ndim not in (2, 3):
        raise ArgumentError("matmul supports 2-D or 3-D operands only")
    if a.data.ndim != b.data.ndim:
        raise ArgumentError("matmul operands must have equal ndim")
    if a.data.ndim == 3 and a.data.shape[0] != b.data.shape[0]:
        raise ArgumentError("batched matmul requires equal batch dimensions")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ArgumentError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )
    data = a.data @ b.data
    _check_finite(data, "matmul")

    def bwd(g):
        _accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        _accumulate(b, np.swapaxes(a.data, -1, -2) @ g)

    return Tensor(data, _parents=(a, b), _backward=bwd)


def rownorm(a) -> Tensor:
    """Euclidean norm along the last axis; gradient is 0 at exactly-zero rows."""
    a = _lift(a)
    data = np.sqrt(np.sum(a.data * a.data, axis=-1))
    _check_finite(data, "rownorm")

    def bwd(g):
        denom = np.where(data > 0.0, data, 1.0)
        _accumulate(a, (g / denom)[..., None] * a.data)

    return Tensor(data, _parents=(a,), _backward=bwd)


# -- reductions and shape ops ------------------------------------------------


def _reduced_shape(shape, axis):
    if axis is None:
        return tuple(1 for _ in shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(shape) for ax in axes)
    return tuple(1 if i in axes else d for i, d in enumerate(shape))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    data = np.sum(a.data, axis=axis, keepdims=keepdims)
    _check_finite(data, "sum")
    kshape = _reduced_shape(a.data.shape, axis)

    def bwd(g):
        _accumulate(a, np.broadcast_to(g.reshape(kshape), a.data.shape))

    return Tensor(data, _parents=(a,), _backward=bwd)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    data = np.mean(a.data, axis=axis, keepdims=keepdims)
    _check_finite(data, "mean")
    kshape = _reduced_shape(a.data.shape, axis)
    count = a.data.size / max(data.size, 1)

    def bwd(g):
        _accumulate(a, np.broadcast_to(g.reshape(kshape) / count, a.data.shape))

    return Tensor(data, _parents=(a,), _backward=bwd)


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    data = a.data.reshape(shape)

    def bwd(g):
        _accumulate(a, g.reshape(a.data.shape))

    return Tensor(data, _parents=(a,), _backward=bwd)


def repeat_rows(a, k: int) -> Tensor:
    """(n, d) -> (n*k, d) with each row repeated k times consecutively."""
    a = _lift(a)
    if a.data.ndim != 2:
        raise ArgumentError("repeat_rows expects a 2-D tensor")
    data = np.repeat(a.data, k, axis=0)

    def bwd(g):
        _accumulate(a, g.reshape(a.data.shape[0], k, -1).sum(axis=1))

    return Tensor(data, _parents=(a,), _backward=bwd)


def tile_rows(a, k: int) -> Tensor:
    """(n, d) -> (k*n, d) with the whole row block repeated k times."""
    a = _lift(a)
    if a.data.ndim != 2:
        raise ArgumentError("tile_rows expects a 2-D tensor")
    data = np.tile(a.data, (k, 1))

    def bwd(g):
        _accumulate(a, g.reshape(k, *a.data.shape).sum(axis=0))

    return Tensor(data, _parents=(a,), _backward=bwd)


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [_lift(t) for t in tensors]
    if not ts:
        raise ArgumentError("concat requires at least one tensor")
    data = np.concatenate([t.data for t in ts], axis=axis)
    _check_finite(data, "concat")
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return Tensor(data, _parents=tuple(ts), _backward=bwd)


# -- gradient API -------------------------------------------------------------


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


def grad(loss: Tensor, params) -> list[np.ndarray]:
    """Gradients of a scalar loss w.r.t. a parameter collection.

    Parameters absent from the graph get zero gradients.
    """
    if not isinstance(loss, Tensor):
        raise ArgumentError("grad() expects a Tensor loss")
    zero_grads(params)
    loss.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
