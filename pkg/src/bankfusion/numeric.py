"""Dense float64 matrices with reverse-mode differentiation.

Every operation returns a new :class:`Matrix` node that remembers its parents
and a closure pushing the output gradient back to them.  :func:`backward`
sweeps the graph reachable from a 1x1 loss in reverse topological order.

Rows are independent samples throughout the package, so a 1 x d matrix is a
single feature vector and a B x d matrix is a mini-batch of them.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


def _as_2d(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced a non-finite value")


class Matrix:
    """A 2-D float64 array that participates in the gradient tape.

    Leaves are created directly; set ``requires_grad=True`` for trainable
    parameters.  Non-leaf nodes are produced by the module-level operations.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = _as_2d(data)
        _check_finite(arr, "leaf")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self.parents: tuple[Matrix, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Matrix"],
        op: str,
        backward: Callable[[np.ndarray], None],
    ) -> "Matrix":
        """Register a new node; ``backward`` receives the output gradient.

        ``data`` is taken without copying and must already be a 2-D float64
        array.  Use :func:`accumulate` inside ``backward`` to feed parents.
        """
        _check_finite(data, op)
        node = cls.__new__(cls)
        node.data = data
        node.grad = None
        node.parents = tuple(parents)
        node.requires_grad = any(p.requires_grad for p in node.parents)
        node.op = op
        node._backward = backward if node.requires_grad else None
        return node

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
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols}, op={self.op})"

    def __matmul__(self, other: "Matrix") -> "Matrix":
        return matmul(self, other)

    def __add__(self, other: "Matrix") -> "Matrix":
        return add(self, other)

    @property
    def T(self) -> "Matrix":
        return transpose(self)


def accumulate(node: Matrix, grad: np.ndarray) -> None:
    """Add ``grad`` into ``node.grad``; no-op for nodes off the tape."""
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = grad.copy()
    else:
        node.grad += grad


def _shape_str(*ms: Matrix) -> str:
    return " and ".join(f"{m.rows}x{m.cols}" for m in ms)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: cannot multiply {_shape_str(a, b)}")

    def back(g):
        accumulate(a, g @ b.data.T)
        accumulate(b, a.data.T @ g)

    return Matrix.from_op(a.data @ b.data, (a, b), "matmul", back)


def add(a: Matrix, b: Matrix) -> Matrix:
    """Elementwise sum; either operand may be a 1 x n row added to every row."""
    if a.shape == b.shape:
        def back(g):
            accumulate(a, g)
            accumulate(b, g)
    elif b.rows == 1 and b.cols == a.cols:
        def back(g):
            accumulate(a, g)
            accumulate(b, g.sum(axis=0, keepdims=True))
    elif a.rows == 1 and a.cols == b.cols:
        def back(g):
            accumulate(a, g.sum(axis=0, keepdims=True))
            accumulate(b, g)
    else:
        raise ShapeError(f"add: incompatible shapes {_shape_str(a, b)}")
    return Matrix.from_op(a.data + b.data, (a, b), "add", back)


def add_all(terms: Sequence[Matrix]) -> Matrix:
    """Left fold of :func:`add`; the fixed order keeps sums reproducible."""
    if not terms:
        raise ShapeError("add_all: empty sequence")
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out


def mul(a: Matrix, b: Matrix) -> Matrix:
    """Elementwise (Hadamard) product of equal-shape matrices."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {_shape_str(a, b)}")

    def back(g):
        accumulate(a, g * b.data)
        accumulate(b, g * a.data)

    return Matrix.from_op(a.data * b.data, (a, b), "mul", back)


def scale(a: Matrix, s: float) -> Matrix:
    s = float(s)

    def back(g):
        accumulate(a, g * s)

    return Matrix.from_op(a.data * s, (a,), "scale", back)


def row_scale(a: Matrix, c: Matrix) -> Matrix:
    """Multiply row r of ``a`` (B x n) by the scalar ``c[r, 0]`` (c is B x 1)."""
    if c.cols != 1 or c.rows != a.rows:
        raise ShapeError(f"row_scale: need Bxn and Bx1, got {_shape_str(a, c)}")

    def back(g):
        accumulate(a, g * c.data)
        accumulate(c, (g * a.data).sum(axis=1, keepdims=True))

    return Matrix.from_op(a.data * c.data, (a, c), "row_scale", back)


def row_sum(a: Matrix) -> Matrix:
    """Sum each row, giving a B x 1 column."""

    def back(g):
        accumulate(a, np.broadcast_to(g, a.shape))

    return Matrix.from_op(a.data.sum(axis=1, keepdims=True), (a,), "row_sum", back)


def row_dot(a: Matrix, b: Matrix) -> Matrix:
    """Per-row inner product ``a[r] . b[r]``; for 1 x d inputs this is a b^T."""
    return row_sum(mul(a, b))


def total(a: Matrix) -> Matrix:
    """Sum of all entries as a 1x1 matrix."""

    def back(g):
        accumulate(a, np.full(a.shape, g[0, 0]))

    return Matrix.from_op(np.array([[a.data.sum()]]), (a,), "sum", back)


def transpose(a: Matrix) -> Matrix:
    def back(g):
        accumulate(a, g.T)

    return Matrix.from_op(a.data.T.copy(), (a,), "transpose", back)


def concat_cols(parts: Sequence[Matrix]) -> Matrix:
    if not parts:
        raise ShapeError("concat_cols: empty sequence")
    rows = parts[0].rows
    if any(p.rows != rows for p in parts):
        raise ShapeError(f"concat_cols: row counts differ ({_shape_str(*parts)})")
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def back(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            accumulate(p, g[:, lo:hi])

    data = np.concatenate([p.data for p in parts], axis=1)
    return Matrix.from_op(data, parts, "concat_cols", back)


def slice_cols(a: Matrix, start: int, stop: int) -> Matrix:
    if not 0 <= start < stop <= a.cols:
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for {a.cols} columns")

    def back(g):
        full = np.zeros(a.shape)
        full[:, start:stop] = g
        accumulate(a, full)

    return Matrix.from_op(a.data[:, start:stop].copy(), (a,), "slice_cols", back)


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function that only ever exponentiates non-positive values."""
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Matrix) -> Matrix:
    s = stable_sigmoid(x.data)

    def back(g):
        accumulate(x, g * s * (1.0 - s))

    return Matrix.from_op(s, (x,), "sigmoid", back)


def stable_softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_row(x: Matrix) -> Matrix:
    """Row-wise softmax with max subtraction."""
    if x.cols < 1:
        raise ShapeError("softmax_row: need at least one column")
    p = stable_softmax(x.data)

    def back(g):
        accumulate(x, p * (g - (g * p).sum(axis=1, keepdims=True)))

    return Matrix.from_op(p, (x,), "softmax_row", back)


def topological_order(root: Matrix) -> list[Matrix]:
    """Nodes reachable from ``root`` with every node after its parents."""
    order: list[Matrix] = []
    seen: set[int] = set()
    stack: list[tuple[Matrix, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Matrix) -> dict[Matrix, np.ndarray]:
    """Reverse sweep from a scalar ``loss``.

    Gradients of all reachable nodes are reset first, so calling this twice on
    the same graph gives the same result.  Returns ``{leaf: gradient}`` for
    every reachable leaf with ``requires_grad``.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a 1x1 loss, got {loss.rows}x{loss.cols}")
    order = topological_order(loss)
    for node in order:
        node.grad = None
    if not loss.requires_grad:
        return {}
    loss.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    grads = {}
    for node in order:
        if node.op == "leaf" and node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros(node.shape)
            grads[node] = node.grad
    return grads


def identity(n: int) -> Matrix:
    return Matrix(np.eye(n))


def zeros(rows: int, cols: int, requires_grad: bool = False) -> Matrix:
    return Matrix(np.zeros((rows, cols)), requires_grad=requires_grad)


def uniform(rows: int, cols: int, bound: float, rng: np.random.Generator) -> Matrix:
    """Trainable leaf with entries drawn uniformly from [-bound, bound]."""
    return Matrix(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True)


def finite_difference_grad(
    f: Callable[[], float], leaf: Matrix, rel_step: float = 1e-5
) -> np.ndarray:
    """Central differences of ``f`` w.r.t. every entry of ``leaf``.

    The step for entry x is ``rel_step * (1 + |x|)``.  ``leaf.data`` is
    perturbed in place and restored exactly.
    """
    out = np.zeros(leaf.shape)
    it = np.nditer(leaf.data, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        x = leaf.data[idx]
        h = rel_step * (1.0 + abs(x))
        leaf.data[idx] = x + h
        up = f()
        leaf.data[idx] = x - h
        down = f()
        leaf.data[idx] = x
        out[idx] = (up - down) / (2.0 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max entrywise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0

