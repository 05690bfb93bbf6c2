"""Dense-tensor math with reverse-mode gradients.

Small tape-based autograd over numpy arrays, covering exactly the ops the
walker model needs: affine maps, gate nonlinearities, softmax with
temperature, max-pooling over candidates, embedding row gathers, and the
scalar reductions used by the losses. No implicit broadcasting: every
binary op requires exact shape agreement except the two documented cases
(matrix-plus-row-bias and matrix-vector products).
"""

from __future__ import annotations

import threading
from typing import Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "grad_enabled",
    "add",
    "add_bias",
    "sub",
    "mul",
    "scale",
    "linear",
    "matmul",
    "concat",
    "relu",
    "tanh",
    "sigmoid_vec",
    "softmax_tau",
    "log_softmax_tau",
    "max_rows",
    "rows",
    "row",
    "pick",
    "square",
    "tsum",
    "tmean",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not match an op's contract."""


class _GradMode(threading.local):
    def __init__(self):
        self.enabled = True


_GRAD_MODE = _GradMode()


class no_grad:
    """Context manager that disables tape recording inside the block.

    The flag is thread-local so concurrent evaluation workers cannot
    disturb each other (or the main thread).
    """

    def __enter__(self):
        self._prev = _GRAD_MODE.enabled
        _GRAD_MODE.enabled = False
        return self

    def __exit__(self, *exc):
        _GRAD_MODE.enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_MODE.enabled


class Tensor:
    """A numpy array plus the tape hooks for reverse-mode differentiation.

    ``grad`` is lazily allocated and accumulated into by ``backward``;
    leaf tensors (parameters) keep their accumulated gradient until the
    optimizer clears it.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None and arr.dtype != dtype:
            arr = arr.astype(dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from a scalar tensor through the recorded tape."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar tensor, got shape %s" % (self.shape,))
        order: list[Tensor] = []
        seen = set()
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
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return "Tensor(shape=%s, dtype=%s, grad=%s)" % (
            self.shape, self.data.dtype.name, self.requires_grad)


def _wants_grad(t: Tensor) -> bool:
    return t.requires_grad or t._parents != ()


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_MODE.enabled and any(_wants_grad(p) for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError("%s: shape mismatch %s vs %s" % (op, a.shape, b.shape))


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    data = a.data + b.data

    def backward(g):
        a._accumulate(g)
        b._accumulate(g)

    return _result(data, (a, b), backward)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a bias vector to each row of a matrix, or to a vector."""
    if b.data.ndim != 1:
        raise ShapeError("add_bias: bias must be 1-D, got %s" % (b.shape,))
    if x.data.ndim == 1:
        return add(x, b)
    if x.data.ndim != 2 or x.shape[1] != b.shape[0]:
        raise ShapeError("add_bias: cannot add bias %s to %s" % (b.shape, x.shape))
    data = x.data + b.data

    def backward(g):
        x._accumulate(g)
        b._accumulate(g.sum(axis=0))

    return _result(data, (x, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    data = a.data - b.data

    def backward(g):
        a._accumulate(g)
        b._accumulate(-g)

    return _result(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    data = a.data * b.data

    def backward(g):
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)

    return _result(data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    data = a.data * a.data.dtype.type(c)

    def backward(g):
        a._accumulate(g * a.data.dtype.type(c))

    return _result(data, (a,), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused affine map x @ w + b for a vector or a matrix of rows."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError("linear: input width %s does not match weight %s"
                         % (x.shape, w.shape))
    if b.data.ndim != 1 or b.shape[0] != w.shape[1]:
        raise ShapeError("linear: bias %s does not match weight %s"
                         % (b.shape, w.shape))
    data = x.data @ w.data + b.data

    def backward(g):
        if _wants_grad(x):
            x._accumulate(g @ w.data.T)
        if _wants_grad(w):
            if x.data.ndim == 1:
                w._accumulate(np.outer(x.data, g))
            else:
                w._accumulate(x.data.T @ g)
        if _wants_grad(b):
            b._accumulate(g if g.ndim == 1 else g.sum(axis=0))

    return _result(data, (x, w, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; supports (n,k)@(k,m), (n,k)@(k,) and (k,)@(k,)."""
    if a.data.ndim == 0 or b.data.ndim == 0:
        raise ShapeError("matmul: operands must be at least 1-D")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul: inner dims differ, %s vs %s" % (a.shape, b.shape))
    data = a.data @ b.data

    def backward(g):
        da, db = _wants_grad(a), _wants_grad(b)
        if a.data.ndim == 2 and b.data.ndim == 2:
            if da:
                a._accumulate(g @ b.data.T)
            if db:
                b._accumulate(a.data.T @ g)
        elif a.data.ndim == 2 and b.data.ndim == 1:
            if da:
                a._accumulate(np.outer(g, b.data))
            if db:
                b._accumulate(a.data.T @ g)
        elif a.data.ndim == 1 and b.data.ndim == 2:
            if da:
                a._accumulate(g @ b.data.T)
            if db:
                b._accumulate(np.outer(a.data, g))
        else:  # vector dot product
            if da:
                a._accumulate(g * b.data)
            if db:
                b._accumulate(g * a.data)

    return _result(data, (a, b), backward)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not parts:
        raise ShapeError("concat: empty input")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if not _wants_grad(p):
                continue
            if g.ndim == 1:
                p._accumulate(g[lo:hi])
            elif axis in (1, -1):
                p._accumulate(g[:, lo:hi])
            else:
                p._accumulate(g[lo:hi])

    return _result(data, tuple(parts), backward)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)

    def backward(g):
        x._accumulate(g * (x.data > 0))

    return _result(data, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - data * data))

    return _result(data, (x,), backward)


def sigmoid_vec(x: Tensor) -> Tensor:
    """Element-wise logistic sigmoid; outputs lie strictly in (0, 1).

    Saturated values are nudged off 0 and 1 by one epsilon so that
    downstream quantities built from these values (e.g. visit-weighted
    value averages) stay inside the open interval.
    """
    eps = np.finfo(x.data.dtype).eps
    data = np.clip(expit(x.data), eps, 1.0 - eps)

    def backward(g):
        x._accumulate(g * data * (1.0 - data))

    return _result(data, (x,), backward)


def softmax_tau(x: Tensor, tau: float = 1.0) -> Tensor:
    """Temperature softmax over a vector, computed with max-subtraction."""
    if tau <= 0:
        raise ValueError("softmax temperature must be positive, got %r" % tau)
    if x.data.ndim != 1:
        raise ShapeError("softmax_tau expects a vector, got shape %s" % (x.shape,))
    z = x.data / x.data.dtype.type(tau)
    z = z - z.max()
    e = np.exp(z)
    data = e / e.sum()

    def backward(g):
        dot = float(np.dot(g, data))
        x._accumulate(data * (g - dot) / x.data.dtype.type(tau))

    return _result(data, (x,), backward)


def log_softmax_tau(x: Tensor, tau: float = 1.0) -> Tensor:
    if tau <= 0:
        raise ValueError("softmax temperature must be positive, got %r" % tau)
    z = x.data / x.data.dtype.type(tau)
    z = z - z.max()
    lse = np.log(np.exp(z).sum())
    data = z - lse
    soft = np.exp(data)

    def backward(g):
        x._accumulate((g - soft * g.sum()) / x.data.dtype.type(tau))

    return _result(data, (x,), backward)


def max_rows(x: Tensor) -> Tensor:
    """Coordinate-wise max over the rows of a (k, m) matrix."""
    if x.data.ndim != 2:
        raise ShapeError("max_rows expects a matrix, got shape %s" % (x.shape,))
    idx = np.argmax(x.data, axis=0)
    data = x.data[idx, np.arange(x.shape[1])]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[idx, np.arange(x.shape[1])] = g
        x._accumulate(gx)

    return _result(data, (x,), backward)


def rows(table: Tensor, ids) -> Tensor:
    """Gather rows of an embedding table; gradient scatter-adds by row id."""
    ids = np.asarray(ids, dtype=np.int64)
    data = table.data[ids]

    def backward(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    return _result(data, (table,), backward)


def row(x: Tensor, i: int) -> Tensor:
    data = x.data[i]

    def backward(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[i] += g

    return _result(data, (x,), backward)


def pick(x: Tensor, i: int) -> Tensor:
    """Select one entry of a vector as a scalar tensor."""
    if x.data.ndim != 1:
        raise ShapeError("pick expects a vector, got shape %s" % (x.shape,))
    data = x.data[i]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[i] = g
        x._accumulate(gx)

    return _result(data, (x,), backward)


def square(x: Tensor) -> Tensor:
    data = x.data * x.data

    def backward(g):
        x._accumulate(2.0 * g * x.data)

    return _result(data, (x,), backward)


def tsum(x: Tensor) -> Tensor:
    data = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def backward(g):
        x._accumulate(np.full_like(x.data, g))

    return _result(data, (x,), backward)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    data = np.asarray(x.data.mean(), dtype=x.data.dtype)

    def backward(g):
        x._accumulate(np.full_like(x.data, g / n))

    return _result(data, (x,), backward)
