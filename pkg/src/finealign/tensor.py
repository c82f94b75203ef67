"""Dense float64 tensors with reverse-mode differentiation.

Every public op builds a new immutable :class:`Tensor`.  When at least one
input requires a gradient the op also records a closure that maps the
output adjoint to input adjoints; :func:`backward` replays those closures in
reverse topological order.  There is no broadcasting: shapes must agree
exactly, and any expansion goes through :func:`repeat_rows` /
:func:`repeat_cols`.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels

DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An input lies outside an op's domain (e.g. log of a non-positive value)."""


class DegenerateVectorError(ValueError):
    """A zero-norm vector was passed where a direction is required."""


class EmptyInputError(ValueError):
    pass


class ContractError(RuntimeError):
    """A caller broke an API precondition (e.g. backward on a non-scalar)."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable op recording in this thread for the duration of the block."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op: str = ""):
        arr = np.array(data, dtype=DTYPE)
        if not isinstance(self, Parameter):
            arr.flags.writeable = False
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'})"

    # operator sugar; all of these go through the checked ops below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    """A trainable leaf.  ``grad`` always has the value's shape."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", requires_grad: bool = True):
        super().__init__(data, requires_grad=requires_grad)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def assign(self, value: np.ndarray):
        value = np.asarray(value, dtype=DTYPE)
        if value.shape != self.data.shape:
            raise ShapeError(f"cannot assign shape {value.shape} to parameter of shape {self.shape}")
        self.data = np.array(value)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if _grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, op=op)
    return Tensor(data, op=op)


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


def _check_2d(x: Tensor, op: str):
    if x.data.ndim != 2:
        raise ShapeError(f"{op}: expected a 2-D tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# linear algebra and elementwise arithmetic


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_2d(a, "matmul")
    _check_2d(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    A, B = a.data, b.data

    def back(g):
        return g @ B.T, A.T @ g

    return _make(A @ B, (a, b), back, "matmul")


def transpose(a: Tensor) -> Tensor:
    _check_2d(a, "transpose")
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    A, B = a.data, b.data
    return _make(A * B, (a, b), lambda g: (g * B, g * A), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "div")
    A, B = a.data, b.data
    return _make(A / B, (a, b), lambda g: (g / B, -g * A / (B * B)), "div")


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _make(a.data + c, (a,), lambda g: (g,), "add_scalar")


def add_n(terms: Sequence[Tensor]) -> Tensor:
    """Sum of equally-shaped tensors, accumulated left to right."""
    terms = list(terms)
    if not terms:
        raise EmptyInputError("add_n of an empty list")
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out


# ---------------------------------------------------------------------------
# pointwise functions


def _sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def pointwise(x: Tensor, fn: str) -> Tensor:
    """Apply ``fn`` elementwise; fn is one of sigmoid, log, exp, relu, sqrt, softplus."""
    X = x.data
    if fn == "sigmoid":
        Y = _sigmoid(X)
        back = lambda g: (g * Y * (1.0 - Y),)
    elif fn == "log":
        if np.any(X <= 0):
            raise DomainError("log of a non-positive value")
        Y = np.log(X)
        back = lambda g: (g / X,)
    elif fn == "exp":
        Y = np.exp(X)
        back = lambda g: (g * Y,)
    elif fn == "relu":
        Y = np.where(X > 0, X, 0.0)
        back = lambda g: (np.where(X > 0, g, 0.0),)
    elif fn == "sqrt":
        if np.any(X < 0):
            raise DomainError("sqrt of a negative value")
        Y = np.sqrt(X)
        back = lambda g: (g * 0.5 / Y,)
    elif fn == "softplus":
        Y = np.maximum(X, 0.0) + np.log1p(np.exp(-np.abs(X)))
        back = lambda g: (g * _sigmoid(X),)
    else:
        raise ValueError(f"unknown pointwise function {fn!r}")
    return _make(Y, (x,), back, fn)


def sigmoid(x):
    return pointwise(x, "sigmoid")


def relu(x):
    return pointwise(x, "relu")


def exp(x):
    return pointwise(x, "exp")


def log(x):
    return pointwise(x, "log")


def sqrt(x):
    return pointwise(x, "sqrt")


def softplus(x):
    return pointwise(x, "softplus")


# ---------------------------------------------------------------------------
# row-wise normalisations


def row_softmax(x: Tensor) -> Tensor:
    _check_2d(x, "row_softmax")
    if not np.all(np.isfinite(x.data)):
        raise DomainError("row_softmax of non-finite input")
    Y = _kernels.softmax_rows(np.ascontiguousarray(x.data))
    return _make(Y, (x,), lambda g: (_kernels.softmax_rows_grad(Y, np.ascontiguousarray(g)),), "softmax")


def row_log_softmax(x: Tensor) -> Tensor:
    _check_2d(x, "row_log_softmax")
    if not np.all(np.isfinite(x.data)):
        raise DomainError("row_log_softmax of non-finite input")
    Y = _kernels.log_softmax_rows(np.ascontiguousarray(x.data))
    return _make(Y, (x,), lambda g: (_kernels.log_softmax_rows_grad(Y, np.ascontiguousarray(g)),), "log_softmax")


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise each row to zero mean and unit variance (no affine part)."""
    _check_2d(x, "layer_norm")
    Y, inv = _kernels.layer_norm(np.ascontiguousarray(x.data), eps)
    return _make(Y, (x,), lambda g: (_kernels.layer_norm_grad(Y, inv, np.ascontiguousarray(g)),), "layer_norm")


# ---------------------------------------------------------------------------
# reductions and shape plumbing

_AXES = {"rows": 0, "cols": 1}


def reduce_sum(x: Tensor, axis: str = "all") -> Tensor:
    """Sum over ``rows`` (result has one entry per column), ``cols``, or ``all``."""
    if x.size == 0:
        raise EmptyInputError("reduce_sum of an empty tensor")
    shape = x.shape
    if axis == "all":
        return _make(x.data.sum(), (x,), lambda g: (np.full(shape, float(g)),), "sum")
    _check_2d(x, "reduce_sum")
    ax = _AXES[axis]
    if ax == 0:
        return _make(x.data.sum(axis=0), (x,), lambda g: (np.tile(g, (shape[0], 1)),), "sum_rows")
    return _make(x.data.sum(axis=1), (x,), lambda g: (np.repeat(g[:, None], shape[1], axis=1),), "sum_cols")


def reduce_mean(x: Tensor, axis: str = "all") -> Tensor:
    """Arithmetic mean over ``rows``, ``cols`` or ``all``; see :func:`reduce_sum`."""
    if x.size == 0:
        raise EmptyInputError("reduce_mean of an empty tensor")
    if axis == "all":
        n = x.size
    else:
        _check_2d(x, "reduce_mean")
        n = x.shape[_AXES[axis]]
    return scale(reduce_sum(x, axis), 1.0 / n)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view shape {x.shape} as {shape}")
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def repeat_rows(v: Tensor, m: int) -> Tensor:
    """Stack vector ``v`` (length n) ``m`` times into an m x n matrix."""
    if v.data.ndim != 1:
        raise ShapeError(f"repeat_rows expects a vector, got shape {v.shape}")
    return _make(np.tile(v.data, (m, 1)), (v,), lambda g: (g.sum(axis=0),), "repeat_rows")


def repeat_cols(v: Tensor, n: int) -> Tensor:
    """Place vector ``v`` (length m) in each of ``n`` columns, giving m x n."""
    if v.data.ndim != 1:
        raise ShapeError(f"repeat_cols expects a vector, got shape {v.shape}")
    return _make(np.repeat(v.data[:, None], n, axis=1), (v,), lambda g: (g.sum(axis=1),), "repeat_cols")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise EmptyInputError("concat_rows of an empty list")
    for p in parts:
        _check_2d(p, "concat_rows")
    width = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != width:
            raise ShapeError(f"concat_rows: column counts differ ({parts[0].shape} vs {p.shape})")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def back(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=0), parts, back, "concat_rows")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    for p in parts:
        _check_2d(p, "concat_cols")
    height = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != height:
            raise ShapeError(f"concat_cols: row counts differ ({parts[0].shape} vs {p.shape})")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=1), parts, back, "concat_cols")


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    _check_2d(x, "slice_rows")
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _make(x.data[start:stop], (x,), back, "slice_rows")


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    _check_2d(x, "slice_cols")
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _make(x.data[:, start:stop], (x,), back, "slice_cols")


def gather_rows(x: Tensor, index: Sequence[int]) -> Tensor:
    """Rows ``x[index]``; repeated indices accumulate in the backward pass."""
    _check_2d(x, "gather_rows")
    idx = np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"gather_rows: index out of range for {x.shape[0]} rows")
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), back, "gather_rows")


def pick(x: Tensor, index: Sequence[int]) -> Tensor:
    """Vector of ``x[i, index[i]]`` for each row i."""
    _check_2d(x, "pick")
    idx = np.asarray(index, dtype=np.int64)
    if idx.shape != (x.shape[0],):
        raise ShapeError(f"pick: need one index per row ({x.shape[0]}), got {idx.shape}")
    rows = np.arange(x.shape[0])
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        out[rows, idx] = g
        return (out,)

    return _make(x.data[rows, idx], (x,), back, "pick")


# ---------------------------------------------------------------------------
# vector geometry


def l2_sq_distance(u: Tensor, v: Tensor) -> Tensor:
    """Squared Euclidean distance between two vectors."""
    if u.shape != v.shape or u.data.ndim != 1:
        raise ShapeError(f"l2_sq_distance: vectors of shape {u.shape} and {v.shape}")
    d = sub(u, v)
    return reduce_sum(mul(d, d))


def rowwise_sq_distance(a: Tensor, b: Tensor) -> Tensor:
    """Vector of squared distances between matching rows of ``a`` and ``b``."""
    _same_shape(a, b, "rowwise_sq_distance")
    d = sub(a, b)
    return reduce_sum(mul(d, d), "cols")


def row_normalize(x: Tensor) -> Tensor:
    """Scale each row to unit Euclidean norm."""
    _check_2d(x, "row_normalize")
    sq = x.data * x.data
    if np.any(sq.sum(axis=1) == 0.0):
        raise DegenerateVectorError("row_normalize: a row has zero norm")
    norms = sqrt(reduce_sum(mul(x, x), "cols"))
    return div(x, repeat_cols(norms, x.shape[1]))


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """u.v / (|u| |v|) for two nonzero vectors."""
    if u.shape != v.shape or u.data.ndim != 1:
        raise ShapeError(f"cosine_similarity: vectors of shape {u.shape} and {v.shape}")
    n = u.shape[0]
    uu = row_normalize(reshape(u, (1, n)))
    vv = row_normalize(reshape(v, (1, n)))
    return reshape(matmul(uu, transpose(vv)), ())


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarities between rows of ``a`` and rows of ``b``."""
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"cosine_matrix: feature widths differ ({a.shape} vs {b.shape})")
    return matmul(row_normalize(a), transpose(row_normalize(b)))


# ---------------------------------------------------------------------------
# differentiation


def _topological(loss: Tensor) -> list:
    order, seen = [], set()
    stack = [(loss, False)]
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


def backward(loss: Tensor) -> list:
    """Fill ``grad`` of every Parameter reachable from scalar ``loss``.

    Reachable parameter gradients are overwritten, not accumulated.  The
    recorded graph (the tape) is released afterwards.  Returns the list of
    parameters that received a gradient.
    """
    if loss.data.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return []
    tape = _topological(loss)
    grads = {id(loss): np.ones(())}
    touched = []
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = np.array(g, dtype=DTYPE).reshape(node.shape)
            touched.append(node)
            continue
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node in tape:
        if not isinstance(node, Parameter):
            node._parents = ()
            node._backward = None
    return touched


def finite_diff_grad(f: Callable[[], Tensor], p: Parameter, step: float = 1e-6,
                     coords: Iterable[int] | None = None) -> np.ndarray:
    """Central-difference estimate of d f / d p.

    ``f`` is re-evaluated with each coordinate of ``p`` nudged by +/- step.
    When ``coords`` is given only those flat indices are estimated; the
    others are left at zero.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    flat = p.data.reshape(-1)
    out = np.zeros(p.size)
    idx = range(p.size) if coords is None else coords
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = _scalar(f())
            flat[i] = orig - step
            fm = _scalar(f())
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * step)
    return out.reshape(p.shape)


def _scalar(v) -> float:
    return v.item() if isinstance(v, Tensor) else float(v)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Norm-wise relative error |a - b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=DTYPE).reshape(-1)
    b = np.asarray(b, dtype=DTYPE).reshape(-1)
    den = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / den)


def zero_grad(params: Iterable[Parameter]):
    for p in params:
        p.zero_grad()
