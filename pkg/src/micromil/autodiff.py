"""Dense 2-D tensors with reverse-mode automatic differentiation.

Every value is a ``rows x cols`` numpy array.  Operations record a closure
that pushes the upstream gradient back to their inputs; :meth:`Tensor.backward`
replays the closures in reverse topological order.  The graph is rebuilt on
every forward pass, which is what variable bag sizes require.

Only the operations the MIL model needs are provided.  Binary elementwise
operations accept equal shapes or a scalar (a python number or a 1x1 tensor).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError

_DTYPE: type = np.float32


def get_dtype() -> type:
    return _DTYPE


def set_dtype(dtype) -> None:
    global _DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _DTYPE = dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the default dtype (64-bit for gradient checks)."""
    previous = _DTYPE
    set_dtype(dtype)
    try:
        yield
    finally:
        set_dtype(previous)


def _as_2d(data, dtype) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_2d(data, dtype or _DTYPE)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = ""

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], op: str,
                backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- shape helpers -------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    # -- autodiff ------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(t) into ``t.grad`` for every reachable ``t``."""
        if self.shape != (1, 1):
            raise ContractError(f"backward() needs a 1x1 loss, got {self.shape}")
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

        # interior gradients restart from zero on every call; leaves accumulate
        for node in order:
            if node._backward is not None:
                node.grad = None
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _operand(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=like.data.dtype)


def _check_binary(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape and a.shape != (1, 1) and b.shape != (1, 1):
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} do not match")


def _reduce_to(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.sum(g, keepdims=True)


# -- linear algebra ------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor._result(a.data @ b.data, (a, b), "matmul", backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g.T)

    return Tensor._result(np.ascontiguousarray(a.data.T), (a,), "transpose", backward)


# -- elementwise ---------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = _operand(b, a)
    _check_binary(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g, b.shape))

    return Tensor._result(a.data + b.data, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = _operand(b, a)
    _check_binary(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(-g, b.shape))

    return Tensor._result(a.data - b.data, (a, b), "sub", backward)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = _operand(b, a)
    _check_binary(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g * a.data, b.shape))

    return Tensor._result(a.data * b.data, (a, b), "mul", backward)


def scale(a: Tensor, k: float) -> Tensor:
    k = a.data.dtype.type(k)

    def backward(g):
        a._accumulate(g * k)

    return Tensor._result(a.data * k, (a,), "scale", backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g)

    return Tensor._result(-a.data, (a,), "neg", backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)

    return Tensor._result(a.data * mask, (a,), "relu", backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)

    def backward(g):
        a._accumulate(g * out * (1 - out))

    return Tensor._result(out, (a,), "sigmoid", backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log: input has non-positive entries")

    def backward(g):
        a._accumulate(g / a.data)

    return Tensor._result(np.log(a.data), (a,), "log", backward)


def reciprocal(a: Tensor) -> Tensor:
    if np.any(a.data == 0):
        raise DomainError("reciprocal: input has zero entries")
    out = 1 / a.data

    def backward(g):
        a._accumulate(-g * out * out)

    return Tensor._result(out, (a,), "reciprocal", backward)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        a._accumulate(g * inside)

    return Tensor._result(np.clip(a.data, lo, hi), (a,), "clip", backward)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "relu": relu,
    "sigmoid": sigmoid,
    "log": log,
    "neg": neg,
}


def elementwise(op: str, a: Tensor, b=None) -> Tensor:
    """Dispatch by name; ``b`` is the second operand or, for ``scale``, the factor."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    if op in ("add", "sub", "mul", "scale"):
        if b is None:
            raise ContractError(f"{op} needs a second operand")
        return fn(a, b)
    return fn(a)


# -- reductions and row-wise ops ----------------------------------------

def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(np.broadcast_to(g, a.shape))

    return Tensor._result(np.sum(a.data, keepdims=True), (a,), "sum", backward)


def mean_rows(a: Tensor) -> Tensor:
    """Average over rows: ``n x m`` -> ``1 x m``."""
    n = a.rows

    def backward(g):
        a._accumulate(np.broadcast_to(g / n, a.shape))

    return Tensor._result(a.data.mean(axis=0, keepdims=True), (a,), "mean_rows", backward)


def row_softmax(a: Tensor) -> Tensor:
    x = a.data
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        a._accumulate(out * (g - np.sum(g * out, axis=1, keepdims=True)))

    return Tensor._result(out, (a,), "row_softmax", backward)


def row_normalize(a: Tensor) -> Tensor:
    """Divide each row by its sum."""
    r = a.data.sum(axis=1, keepdims=True)
    out = a.data / r

    def backward(g):
        a._accumulate((g - np.sum(g * out, axis=1, keepdims=True)) / r)

    return Tensor._result(out, (a,), "row_normalize", backward)


def row_l2_normalize(a: Tensor) -> Tensor:
    norms = np.sqrt(np.sum(a.data * a.data, axis=1, keepdims=True))
    if np.any(norms == 0):
        bad = int(np.flatnonzero(norms[:, 0] == 0)[0])
        raise ContractError(f"row {bad} has zero norm")
    out = a.data / norms

    def backward(g):
        a._accumulate((g - out * np.sum(g * out, axis=1, keepdims=True)) / norms)

    return Tensor._result(out, (a,), "row_l2_normalize", backward)


def scale_rows(a: Tensor, v: Tensor) -> Tensor:
    """Multiply row ``i`` of ``a`` by ``v[i, 0]``."""
    if v.shape != (a.rows, 1):
        raise DimensionError(f"scale_rows: need a {a.rows}x1 vector, got {v.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * v.data)
        if v.requires_grad:
            v._accumulate(np.sum(g * a.data, axis=1, keepdims=True))

    return Tensor._result(a.data * v.data, (a, v), "scale_rows", backward)


def sq_dist(x: Tensor, y: Tensor) -> Tensor:
    """Pairwise squared Euclidean distances between rows: ``n x m``."""
    if x.cols != y.cols:
        raise DimensionError(f"sq_dist: feature sizes differ, {x.shape} vs {y.shape}")
    diff = x.data[:, None, :] - y.data[None, :, :]
    out = np.einsum("ijk,ijk->ij", diff, diff)

    def backward(g):
        gd = 2 * g[:, :, None] * diff
        if x.requires_grad:
            x._accumulate(gd.sum(axis=1))
        if y.requires_grad:
            y._accumulate(-gd.sum(axis=0))

    return Tensor._result(out, (x, y), "sq_dist", backward)


def gcn_normalize(a: Tensor) -> Tensor:
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the degree matrix of ``A + I``."""
    n = a.rows
    if a.cols != n:
        raise DimensionError(f"gcn_normalize: adjacency must be square, got {a.shape}")
    b = a.data + np.eye(n, dtype=a.data.dtype)
    deg = b.sum(axis=1)
    r = 1 / np.sqrt(deg)
    out = r[:, None] * b * r[None, :]

    def backward(g):
        gr = np.sum(g * b * r[None, :], axis=1) + np.sum(g * b * r[:, None], axis=0)
        gdeg = gr * (-0.5) * r ** 3
        a._accumulate(g * r[:, None] * r[None, :] + gdeg[:, None])

    return Tensor._result(out, (a,), "gcn_normalize", backward)


def straight_through(value: np.ndarray, soft: Tensor) -> Tensor:
    """Forward ``value``; backward as if the output were ``soft``."""
    value = np.asarray(value, dtype=soft.data.dtype)
    if value.shape != soft.shape:
        raise DimensionError(f"straight_through: {value.shape} vs {soft.shape}")

    def backward(g):
        soft._accumulate(g)

    return Tensor._result(value, (soft,), "straight_through", backward)


def head_rows(a: Tensor, n: int) -> Tensor:
    """The first ``n`` rows of ``a``."""
    if not 1 <= n <= a.rows:
        raise DimensionError(f"head_rows: cannot take {n} rows of {a.shape}")
    if n == a.rows:
        return a

    def backward(g):
        full = np.zeros_like(a.data)
        full[:n] = g
        a._accumulate(full)

    return Tensor._result(a.data[:n].copy(), (a,), "head_rows", backward)
