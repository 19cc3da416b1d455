"""Define-by-run reverse-mode differentiation over dense float64 arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and
a closure mapping the upstream gradient to parent gradients.  Calling
:meth:`Tensor.backward` on a scalar walks that tape in reverse topological
order.

Broadcasting in elementwise ops is limited to scalar-with-tensor.  Row-wise
broadcasting (biases, state-independent log-std vectors) goes through the
explicit :func:`broadcast_to` and :func:`linear` ops.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "DomainError",
    "no_grad",
    "is_grad_enabled",
    "tensor",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "linear",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "square",
    "tsum",
    "mean",
    "clamp",
    "minimum",
    "maximum",
    "logsumexp",
    "softmax",
    "log_softmax",
    "gather",
    "stack",
    "concat",
    "reshape",
    "broadcast_to",
    "detach",
]


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        listed = " and ".join(str(list(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {listed}")


class DomainError(ValueError):
    """An input lies outside the domain of the operation (e.g. log of 0)."""


_GRAD_ENABLED = True


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording anything on the tape."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """Dense float64 value that may participate in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr is data and isinstance(data, np.ndarray):
            arr = arr.copy()
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def square(self):
        return square(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def detach(self) -> Tensor:
        return detach(self)

    # -- reverse pass --------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/dT into ``T.grad`` for every ancestor needing it."""
        if self.data.shape != ():
            raise ShapeError("backward (root must be a scalar)", self.data.shape)
        if not self.requires_grad:
            return

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones((), dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            # ops never write into gradients, so sharing the array is safe
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x) -> Tensor:
    """Wrap arrays and numbers as constant tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    parents = tuple(parents)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _check_elementwise(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(op, a.shape, b.shape)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    return np.sum(g, axis=tuple(range(g.ndim - len(shape)))).reshape(shape)


# -- elementwise binary -----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("add", a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("sub", a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("mul", a, b)
    ad, bd = a.data, b.data
    return _result(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("div", a, b)
    ad, bd = a.data, b.data
    if np.any(bd == 0.0):
        raise DomainError("div: division by zero")
    out = ad / bd
    return _result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("minimum", a, b)
    pick_a = a.data <= b.data
    return _result(
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
    )


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("maximum", a, b)
    pick_a = a.data >= b.data
    return _result(
        np.where(pick_a, a.data, b.data),
        (a, b),
        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
    )


# -- elementwise unary ------------------------------------------------------


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(~(a.data > 0.0)):
        raise DomainError("log: argument must be strictly positive")
    x = a.data
    return _result(np.log(x), (a,), lambda g: (g / x,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0.0):
        raise DomainError("sqrt: argument must be non-negative")
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,))


def square(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _result(x * x, (a,), lambda g: (2.0 * g * x,))


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip into ``[lo, hi]``; the gradient is zero wherever clipping bites."""
    a = as_tensor(a)
    x = a.data
    out = np.clip(x, lo, hi)
    inside = np.ones(x.shape, dtype=bool)
    if lo is not None:
        inside &= x >= lo
    if hi is not None:
        inside &= x <= hi
    return _result(out, (a,), lambda g: (g * inside,))


# -- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:
            return bd @ g, np.outer(ad, g)
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with the bias broadcast over the leading axis."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim not in (1, 2) or weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError("linear", x.shape, weight.shape)
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is None:
        return _result(out, (x, weight), lambda g: _linear_grads(g, xd, wd)[:2])
    bias = as_tensor(bias)
    if bias.shape != (wd.shape[1],):
        raise ShapeError("linear (bias)", weight.shape, bias.shape)
    return _result(out + bias.data, (x, weight, bias), lambda g: _linear_grads(g, xd, wd))


def _linear_grads(g, xd, wd):
    if xd.ndim == 1:
        return g @ wd.T, np.outer(xd, g), g
    return g @ wd.T, xd.T @ g, g.sum(axis=0)


# -- reductions -------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    return axis % ndim if ndim else axis


def tsum(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    axis = _norm_axis(axis, a.ndim)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(np.asarray(a.data.sum(axis=axis)), (a,), backward)


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return tsum(a, axis) * (1.0 / n)


def logsumexp(a) -> Tensor:
    """Overflow-safe ``log(sum(exp(a)))`` over the last axis."""
    a = as_tensor(a)
    x = a.data
    m = np.max(x, axis=-1, keepdims=True)
    shifted = np.exp(x - m)
    total = shifted.sum(axis=-1, keepdims=True)
    out = (m + np.log(total))[..., 0]
    weights = shifted / total
    return _result(out, (a,), lambda g: (np.expand_dims(g, -1) * weights,))


def log_softmax(a) -> Tensor:
    """Normalised log-probabilities over the last axis."""
    a = as_tensor(a)
    x = a.data
    shifted = x - np.max(x, axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    probs = np.exp(out)
    return _result(out, (a,), lambda g: (g - probs * g.sum(axis=-1, keepdims=True),))


def softmax(a) -> Tensor:
    return exp(log_softmax(a))


# -- indexing and shaping ---------------------------------------------------


def gather(a, index) -> Tensor:
    """Pick one entry per row along the last axis: ``out[i] = a[i, index[i]]``."""
    a = as_tensor(a)
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        if np.any(idx != np.round(idx)):
            raise DomainError("gather: indices must be integers")
        idx = idx.astype(np.int64)
    n = a.shape[-1]
    if np.any(idx < 0) or np.any(idx >= n):
        raise DomainError(f"gather: index out of range for axis of size {n}")
    if a.ndim == 1:
        if idx.ndim != 0:
            raise ShapeError("gather", a.shape, idx.shape)
        k = int(idx)

        def backward1(g):
            out = np.zeros(a.shape)
            out[k] = g
            return (out,)

        return _result(np.asarray(a.data[k]), (a,), backward1)
    if a.ndim != 2 or idx.shape != (a.shape[0],):
        raise ShapeError("gather", a.shape, idx.shape)
    rows = np.arange(a.shape[0])

    def backward(g):
        out = np.zeros(a.shape)
        out[rows, idx] = g
        return (out,)

    return _result(a.data[rows, idx], (a,), backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("stack: empty sequence")
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise ShapeError("stack", ts[0].shape, t.shape)
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))

    return _result(out, ts, backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat: empty sequence")
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
            t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax
        ):
            raise ShapeError("concat", ts[0].shape, t.shape)
    out = np.concatenate([t.data for t in ts], axis=ax)
    cuts = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _result(out, ts, lambda g: tuple(np.split(g, cuts, axis=ax)))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    old = a.shape
    return _result(out, (a,), lambda g: (g.reshape(old),))


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    """Explicit trailing-aligned broadcast, e.g. a ``(d,)`` vector to ``(n, d)``."""
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError("broadcast_to", a.shape, shape) from None
    old = a.shape
    lead = len(shape) - len(old)

    def backward(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        keep = tuple(i for i, n in enumerate(old) if n == 1 and g.shape[i] != 1)
        if keep:
            g = g.sum(axis=keep, keepdims=True)
        return (g,)

    return _result(out, (a,), backward)


def detach(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.data)
