"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation records a closure that knows how to push gradients to its
inputs; ``backward`` on a scalar replays the recorded graph in reverse
topological order. Matrices are the common case (batch x features); the
spline machinery adds a few 3-D tensors with dedicated contraction ops.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ContractError, DomainError, ShapeError

# When True, every op asserts its output is finite. Enabled by tests and
# by the CLI's debug flag; off by default because the check walks every
# output array.
debug_check_finite = False

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation-only forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    return arr


class Tensor:
    """Dense float64 array plus an optional gradient of the same shape."""

    __slots__ = ("values", "requires_grad", "grad", "_backward", "_prev", "op")

    def __init__(self, values, requires_grad: bool = False, op: str = "leaf"):
        self.values = _as_array(values)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._backward = None
        self._prev: tuple[Tensor, ...] = ()
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def backward(self) -> None:
        """Populate ``grad`` on every requires_grad tensor reachable from self.

        Self must be a scalar (a single stored value). Repeated calls
        accumulate; use ``zero_grads`` between passes.
        """
        if self.values.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.values.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()

        def build(t: Tensor) -> None:
            if id(t) in visited:
                return
            visited.add(id(t))
            for parent in t._prev:
                build(parent)
            topo.append(t)

        build(self)
        # fresh buffers for op outputs so repeated calls contribute exactly
        # one pass each to the leaves
        for t in topo:
            if t._prev:
                t.grad = None
        self.accumulate(np.ones_like(self.values))
        for t in reversed(topo):
            if t._backward is not None:
                t._backward()

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False, op="const")


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True, op="param")


def zero_grads(params) -> None:
    for p in params:
        p.grad = np.zeros_like(p.values)


def _finish(out: Tensor, parents: tuple[Tensor, ...], backward) -> Tensor:
    if debug_check_finite and not np.all(np.isfinite(out.values)):
        raise FloatingPointError(f"non-finite values produced by op {out.op!r}")
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = parents
        out._backward = backward
    return out


# ---------------------------------------------------------------------------
# shape plumbing for elementwise broadcasting
#
# Allowed: equal shapes, a (1,1) scalar against anything, and a (1,D) row
# repeated across the rows of a (B,D) operand. Nothing else, on purpose.
# ---------------------------------------------------------------------------


def _broadcast_check(a: Tensor, b: Tensor, opname: str) -> None:
    sa, sb = a.values.shape, b.values.shape
    if sa == sb:
        return
    if a.values.size == 1 or b.values.size == 1:
        return
    if len(sa) == 2 and len(sb) == 2 and sa[1] == sb[1] and (sa[0] == 1 or sb[0] == 1):
        return
    raise ShapeError(f"{opname}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if int(np.prod(shape)) == 1:
        return g.sum().reshape(shape)
    # row operand repeated across the batch axis
    return g.sum(axis=0, keepdims=True).reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "add")
    out = Tensor(a.values + b.values, op="add")

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.values.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.values.shape))

    return _finish(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "sub")
    out = Tensor(a.values - b.values, op="sub")

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.values.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.values.shape))

    return _finish(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "mul")
    out = Tensor(a.values * b.values, op="mul")

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.values, a.values.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.values, b.values.shape))

    return _finish(out, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.values * c, op="scale")

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad * c)

    return _finish(out, (a,), backward)


def shift(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.values + c, op="shift")

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad)

    return _finish(out, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.values.shape, b.values.shape
    if len(sa) != 2 or len(sb) != 2 or sa[1] != sb[0]:
        raise ShapeError(f"matmul: incompatible shapes {sa} and {sb}")
    out = Tensor(a.values @ b.values, op="matmul")

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate(g @ b.values.T)
        if b.requires_grad:
            b.accumulate(a.values.T @ g)

    return _finish(out, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.values.T.copy(), op="transpose")

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad.T)

    return _finish(out, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.values.sum(), op="sum")

    def backward():
        if a.requires_grad:
            a.accumulate(np.full_like(a.values, out.grad.item()))

    return _finish(out, (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.values.size
    out = Tensor(a.values.mean(), op="mean")

    def backward():
        if a.requires_grad:
            a.accumulate(np.full_like(a.values, out.grad.item() / n))

    return _finish(out, (a,), backward)


def sum_axis(a: Tensor, axis: int) -> Tensor:
    """Reduce one axis of a matrix, keeping it as a length-1 dimension."""
    if a.values.ndim != 2:
        raise ShapeError(f"sum_axis expects a matrix, got shape {a.values.shape}")
    out = Tensor(a.values.sum(axis=axis, keepdims=True), op="sum_axis")

    def backward():
        if a.requires_grad:
            a.accumulate(np.broadcast_to(out.grad, a.values.shape).copy())

    return _finish(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.values), op="exp")

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad * out.values)

    return _finish(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.values <= 0.0):
        raise DomainError("log of non-positive value")
    out = Tensor(np.log(a.values), op="log")

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad / a.values)

    return _finish(out, (a,), backward)


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    # branch form: never exponentiates a large positive argument
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = Tensor(_sigmoid_values(a.values), op="sigmoid")

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad * out.values * (1.0 - out.values))

    return _finish(out, (a,), backward)


def softplus(a: Tensor) -> Tensor:
    out = Tensor(np.logaddexp(0.0, a.values), op="softplus")

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad * _sigmoid_values(a.values))

    return _finish(out, (a,), backward)


def silu(a: Tensor) -> Tensor:
    s = _sigmoid_values(a.values)
    out = Tensor(a.values * s, op="silu")

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad * (s + a.values * s * (1.0 - s)))

    return _finish(out, (a,), backward)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out = Tensor(np.clip(a.values, lo, hi), op="clamp")
    inside = (a.values > lo) & (a.values < hi)

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad * inside)

    return _finish(out, (a,), backward)


def rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a matrix; the recorded form of one-hot x matrix."""
    idx = np.asarray(idx, dtype=np.intp)
    if np.any(idx < 0) or np.any(idx >= table.values.shape[0]):
        raise ShapeError(
            f"rows: index out of range for table with {table.values.shape[0]} rows"
        )
    out = Tensor(table.values[idx], op="rows")

    def backward():
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.values)
            np.add.at(table.grad, idx, out.grad)

    return _finish(out, (table,), backward)


def concat(parts: list[Tensor]) -> Tensor:
    """Concatenate matrices along the feature axis."""
    rows_ = {p.values.shape[0] for p in parts}
    if len(rows_) != 1:
        raise ShapeError(f"concat: row counts differ: {sorted(rows_)}")
    out = Tensor(np.concatenate([p.values for p in parts], axis=1), op="concat")
    widths = [p.values.shape[1] for p in parts]

    def backward():
        start = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p.accumulate(out.grad[:, start : start + w])
            start += w

    return _finish(out, tuple(parts), backward)


def scale_rows(a: Tensor, s: Tensor) -> Tensor:
    """Multiply each row of a (B,D) matrix by the matching (B,1) scalar."""
    if (
        a.values.ndim != 2
        or s.values.ndim != 2
        or s.values.shape != (a.values.shape[0], 1)
    ):
        raise ShapeError(
            f"scale_rows: need (B,D) and (B,1), got {a.values.shape} and {s.values.shape}"
        )
    out = Tensor(a.values * s.values, op="scale_rows")

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate(g * s.values)
        if s.requires_grad:
            s.accumulate((g * a.values).sum(axis=1, keepdims=True))

    return _finish(out, (a, s), backward)


def prod_axis1(a: Tensor) -> Tensor:
    """Product along the feature axis of a matrix, kept as (B,1)."""
    if a.values.ndim != 2:
        raise ShapeError(f"prod_axis1 expects a matrix, got shape {a.values.shape}")
    out = Tensor(a.values.prod(axis=1, keepdims=True), op="prod_axis1")

    def backward():
        if not a.requires_grad:
            return
        v = a.values
        prods = out.values
        if np.all(v != 0.0):
            partial = prods / v
        else:
            # exact recomputation where a factor is zero
            partial = np.empty_like(v)
            for k in range(v.shape[1]):
                partial[:, k] = np.prod(np.delete(v, k, axis=1), axis=1)
        a.accumulate(out.grad * partial)

    return _finish(out, (a,), backward)


def spline_mix(bases: Tensor, coeffs: Tensor) -> Tensor:
    """Contract a (B,n,L) basis tensor with (Q,n,L) edge coefficients to (B,Q)."""
    sb, sc = bases.values.shape, coeffs.values.shape
    if len(sb) != 3 or len(sc) != 3 or sb[1:] != sc[1:]:
        raise ShapeError(f"spline_mix: incompatible shapes {sb} and {sc}")
    out = Tensor(np.einsum("bnl,qnl->bq", bases.values, coeffs.values), op="spline_mix")

    def backward():
        g = out.grad
        if bases.requires_grad:
            bases.accumulate(np.einsum("bq,qnl->bnl", g, coeffs.values))
        if coeffs.requires_grad:
            coeffs.accumulate(np.einsum("bq,bnl->qnl", g, bases.values))

    return _finish(out, (bases, coeffs), backward)


def coeffs_dot(coeffs: Tensor, vec: np.ndarray) -> Tensor:
    """Contract (Q,P,L) coefficients with a fixed L-vector down to (Q,P)."""
    vec = np.asarray(vec, dtype=np.float64)
    sc = coeffs.values.shape
    if len(sc) != 3 or vec.shape != (sc[2],):
        raise ShapeError(f"coeffs_dot: incompatible shapes {sc} and {vec.shape}")
    out = Tensor(coeffs.values @ vec, op="coeffs_dot")

    def backward():
        if coeffs.requires_grad:
            coeffs.accumulate(out.grad[:, :, None] * vec)

    return _finish(out, (coeffs,), backward)
