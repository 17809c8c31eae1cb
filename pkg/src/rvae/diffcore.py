"""Dense tensor arithmetic with tape-based reverse-mode differentiation.

Everything is a 2-D float64 matrix: scalars are (1, 1), vectors are rows
(1, n) or columns (n, 1).  A ``Graph`` records every operation on a tape;
``Graph.backward`` replays the tape in reverse and accumulates gradients
into the participating tensors.  The op set is the smallest one that
expresses MLP forward passes and the cross-entropy / beta-cross-entropy
losses built on top of them; there is no broadcasting beyond row-vector
bias addition (a (1, n) second operand against an (m, n) first operand).

Numeric guards: ``op_log`` clamps its argument to >= 1e-12 and
``op_sigmoid`` clips its output into [1e-7, 1 - 1e-7], so probabilities
fed into logs and powers never reach exact 0 or 1.

Graphs are single-threaded: build and backward a graph on one thread.
Leaf values detached from any graph are plain numpy arrays and can be
shared freely.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError

LOG_CLAMP = 1e-12
SIGMOID_LO = 1e-7
SIGMOID_HI = 1.0 - 1e-7


def _as_matrix(data) -> np.ndarray:
    """Coerce to a fresh 2-D float64 array ((1,1) scalar, (1,n) row)."""
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"tensors are at most 2-D, got shape {arr.shape}")
    return arr


class Tensor:
    """A node in a computation graph: value, optional gradient, identity."""

    __slots__ = ("graph", "node_id", "data", "grad", "trainable")

    def __init__(self, graph: "Graph", node_id: int, data: np.ndarray, trainable: bool):
        self.graph = graph
        self.node_id = node_id
        self.data = data
        self.grad: np.ndarray | None = None
        self.trainable = trainable

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node_id={self.node_id})"


class _Record:
    """One recorded op: kind, input node ids, output node id, adjoint rule."""

    __slots__ = ("kind", "input_ids", "output_id", "backward_fn")

    def __init__(self, kind: str, input_ids: tuple[int, ...], output_id: int,
                 backward_fn: Callable[[np.ndarray], Sequence[np.ndarray]]):
        self.kind = kind
        self.input_ids = input_ids
        self.output_id = output_id
        self.backward_fn = backward_fn


class Graph:
    """Tape of recorded operations in topological (creation) order."""

    def __init__(self):
        self._nodes: list[Tensor] = []
        self._tape: list[_Record] = []

    def leaf(self, data, trainable: bool = False) -> Tensor:
        """Register a leaf tensor (input, parameter, or constant)."""
        arr = _as_matrix(data)
        t = Tensor(self, len(self._nodes), arr, trainable)
        self._nodes.append(t)
        return t

    def _emit(self, kind: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
              backward_fn: Callable[[np.ndarray], Sequence[np.ndarray]]) -> Tensor:
        for t in inputs:
            if t.graph is not self:
                raise ShapeError(f"op '{kind}' mixes tensors from different graphs")
        if not np.isfinite(out_data).all():
            raise NonFiniteError(kind)
        out = Tensor(self, len(self._nodes), out_data, trainable=False)
        self._nodes.append(out)
        self._tape.append(_Record(kind, tuple(t.node_id for t in inputs),
                                  out.node_id, backward_fn))
        return out

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every tensor that feeds the scalar ``loss``.

        Leaves that do not participate keep an all-zero gradient.  Visits
        each recorded op exactly once, in reverse recorded order.
        """
        if loss.graph is not self:
            raise ShapeError("loss belongs to a different graph")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        for node in self._nodes:
            node.grad = np.zeros_like(node.data)
        loss.grad = np.ones_like(loss.data)
        for rec in reversed(self._tape):
            if rec.output_id > loss.node_id:
                continue
            g_out = self._nodes[rec.output_id].grad
            if not g_out.any():
                continue
            for nid, g in zip(rec.input_ids, rec.backward_fn(g_out)):
                self._nodes[nid].grad += g


def _check_same_graph(kind: str, a: Tensor, b: Tensor) -> None:
    if a.graph is not b.graph:
        raise ShapeError(f"op '{kind}' mixes tensors from different graphs")


def _binary_shapes(kind: str, a: Tensor, b: Tensor, allow_row_broadcast: bool) -> bool:
    """Validate binary operand shapes; True if b is row-broadcast over a."""
    _check_same_graph(kind, a, b)
    if a.shape == b.shape:
        return False
    if allow_row_broadcast and b.shape == (1, a.shape[1]):
        return True
    raise ShapeError(f"op '{kind}': shapes {a.shape} and {b.shape} incompatible")


def op_add(a: Tensor, b: Tensor) -> Tensor:
    broadcast = _binary_shapes("add", a, b, allow_row_broadcast=True)
    out = a.data + b.data

    def bwd(g):
        gb = g.sum(axis=0, keepdims=True) if broadcast else g
        return g, gb

    return a.graph._emit("add", (a, b), out, bwd)


def op_sub(a: Tensor, b: Tensor) -> Tensor:
    broadcast = _binary_shapes("sub", a, b, allow_row_broadcast=True)
    out = a.data - b.data

    def bwd(g):
        gb = -g.sum(axis=0, keepdims=True) if broadcast else -g
        return g, gb

    return a.graph._emit("sub", (a, b), out, bwd)


def op_mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("mul", a, b, allow_row_broadcast=False)
    out = a.data * b.data
    a_data, b_data = a.data, b.data

    def bwd(g):
        return g * b_data, g * a_data

    return a.graph._emit("mul", (a, b), out, bwd)


def op_matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_graph("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"op 'matmul': inner dims {a.shape} x {b.shape} disagree")
    out = a.data @ b.data
    a_data, b_data = a.data, b.data

    def bwd(g):
        return g @ b_data.T, a_data.T @ g

    return a.graph._emit("matmul", (a, b), out, bwd)


def op_neg(t: Tensor) -> Tensor:
    return t.graph._emit("neg", (t,), -t.data, lambda g: (-g,))


def op_scale(t: Tensor, c: float) -> Tensor:
    c = float(c)
    return t.graph._emit("scale", (t,), c * t.data, lambda g: (c * g,))


def op_exp(t: Tensor) -> Tensor:
    # overflow surfaces as NonFiniteError via the _emit finiteness check
    with np.errstate(over="ignore"):
        out = np.exp(t.data)

    def bwd(g):
        return (g * out,)

    return t.graph._emit("exp", (t,), out, bwd)


def op_log(t: Tensor) -> Tensor:
    # Clamped below at LOG_CLAMP; gradient is zero in the clamped region so
    # the op stays consistent with finite differences of what it computes.
    x = t.data
    xc = np.maximum(x, LOG_CLAMP)
    out = np.log(xc)

    def bwd(g):
        return (np.where(x >= LOG_CLAMP, g / xc, 0.0),)

    return t.graph._emit("log", (t,), out, bwd)


def op_pow_scalar(t: Tensor, c: float) -> Tensor:
    c = float(c)
    x = t.data
    with np.errstate(over="ignore", invalid="ignore"):
        out = x ** c

    def bwd(g):
        return (g * c * x ** (c - 1.0),)

    return t.graph._emit("pow_scalar", (t,), out, bwd)


def op_sigmoid(t: Tensor) -> Tensor:
    x = t.data
    # Stable two-branch sigmoid, output clipped into the open interval.
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    s = np.clip(s, SIGMOID_LO, SIGMOID_HI)

    def bwd(g):
        return (g * s * (1.0 - s),)

    return t.graph._emit("sigmoid", (t,), s, bwd)


def op_relu(t: Tensor) -> Tensor:
    x = t.data
    out = np.maximum(x, 0.0)

    def bwd(g):
        return (g * (x > 0.0),)

    return t.graph._emit("relu", (t,), out, bwd)


def op_sum(t: Tensor) -> Tensor:
    shape = t.shape
    out = np.array([[t.data.sum()]])

    def bwd(g):
        return (np.full(shape, g[0, 0]),)

    return t.graph._emit("sum", (t,), out, bwd)


def _check_axis(kind: str, t: Tensor, axis: int) -> None:
    if axis not in (0, 1):
        raise ShapeError(f"op '{kind}': axis {axis} out of range for 2-D tensor")


def op_sum_axis(t: Tensor, axis: int) -> Tensor:
    _check_axis("sum_axis", t, axis)
    shape = t.shape
    out = t.data.sum(axis=axis, keepdims=True)

    def bwd(g):
        return (np.broadcast_to(g, shape).copy(),)

    return t.graph._emit("sum_axis", (t,), out, bwd)


def _exclusive_products(x: np.ndarray, axis: int) -> np.ndarray:
    """prod of all entries along axis except self, via prefix/suffix products."""
    pre = np.ones_like(x)
    suf = np.ones_like(x)
    cum = np.cumprod(x, axis=axis)
    rcum = np.flip(np.cumprod(np.flip(x, axis=axis), axis=axis), axis=axis)
    if axis == 0:
        pre[1:, :] = cum[:-1, :]
        suf[:-1, :] = rcum[1:, :]
    else:
        pre[:, 1:] = cum[:, :-1]
        suf[:, :-1] = rcum[:, 1:]
    return pre * suf


def op_prod_axis(t: Tensor, axis: int = 1) -> Tensor:
    _check_axis("prod_axis", t, axis)
    x = t.data
    out = x.prod(axis=axis, keepdims=True)

    def bwd(g):
        return (np.broadcast_to(g, x.shape) * _exclusive_products(x, axis),)

    return t.graph._emit("prod_axis", (t,), out, bwd)


def backward(graph: Graph, loss: Tensor) -> None:
    """Free-function alias for ``Graph.backward``."""
    graph.backward(loss)
