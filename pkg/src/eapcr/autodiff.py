"""Dense float64 tensors with reverse-mode automatic differentiation.

Execution is eager: every differentiable operation computes its result
immediately and, when a :class:`Graph` is active, appends a node to that
graph's tape. ``Graph.backward`` replays the tape in exact reverse execution
order, accumulating gradients into ``Tensor.grad`` buffers (numpy arrays of
the same shape as the tensor data).

The operation set is deliberately small: exactly what the EAPCR forward pass
and its training loop need. All ops accept an optional leading batch axis in
addition to the per-sample shapes documented on each function. Broadcasting
beyond that (plus bias-style trailing-axis broadcast in :func:`add`) is out
of scope.

Conventions fixed here so results are reproducible:

* everything is float64; outputs of every op are checked finite and a
  :class:`~eapcr.errors.NumericError` is raised otherwise (overflow during a
  divergent training run surfaces as an error, never as silent NaN state);
* ``relu`` uses subgradient 0 at exactly 0;
* ``maxpool2`` breaks ties towards the first window position in row-major
  order, and handles odd trailing edges with 1-wide/1-tall windows.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DimensionError,
    GraphConsumedError,
    GraphStateError,
    IndexLookupError,
    NumericError,
)

Array = np.ndarray

__all__ = [
    "Tensor",
    "Graph",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "relu",
    "conv2d",
    "maxpool2",
    "gather_rows",
    "concat",
    "transpose",
    "reshape",
    "flatten",
    "mean",
    "tensor_sum",
]


class Tensor:
    """A dense float64 array plus a gradient buffer.

    ``grad`` is ``None`` until a backward pass deposits into it. Tensors are
    treated as immutable once created; new values come from ops (or from the
    optimizer, which builds fresh tensors).
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: Array) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # Operator sugar; canonical API is the module-level functions.
    def __add__(self, other):
        return add(self, _lift(other))

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def relu(self) -> "Tensor":
        return relu(self)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes=None) -> "Tensor":
        return transpose(self, axes)

    def mean(self) -> "Tensor":
        return mean(self)

    def sum(self) -> "Tensor":
        return tensor_sum(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Tape


class Graph:
    """Recorded tape of executed ops, replayed in reverse by ``backward``.

    Use as a context manager around the forward pass::

        with Graph() as g:
            loss = ...
        g.backward(loss)

    A graph is single-shot: calling ``backward`` a second time raises
    :class:`~eapcr.errors.GraphConsumedError`.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, Callable[[Array], None]]] = []
        self._produced: set[int] = set()
        self._consumed = False

    def __enter__(self) -> "Graph":
        _ACTIVE.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _ACTIVE.pop()
        assert popped is self

    def record(self, out: Tensor, backward_fn: Callable[[Array], None]) -> None:
        self._nodes.append((out, backward_fn))
        self._produced.add(id(out))

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        """Fill ``grad`` buffers for every tensor the loss depends on."""
        if self._consumed:
            raise GraphConsumedError("graph already consumed by a previous backward pass")
        if loss.shape != ():
            raise DimensionError(f"loss must be scalar, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise GraphStateError("loss tensor was not produced under this graph")
        self._consumed = True
        loss.grad = np.ones((), dtype=np.float64)
        for out, fn in reversed(self._nodes):
            if out.grad is not None:
                fn(out.grad)


_ACTIVE: list[Graph] = []


def backward(loss: Tensor, graph: Graph) -> None:
    """Functional alias for ``graph.backward(loss)``."""
    graph.backward(loss)


def _finite_or_raise(data: Array, op: str) -> None:
    if not np.isfinite(data).all():
        raise NumericError(f"{op} produced non-finite values")


def _result(data: Array, inputs: Sequence[Tensor], op: str,
            backward_fn: Callable[[Array], None]) -> Tensor:
    _finite_or_raise(data, op)
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    if _ACTIVE and out.requires_grad:
        _ACTIVE[-1].record(out, backward_fn)
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; shapes must match or be broadcastable (bias add)."""
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None

    def _bwd(g: Array) -> None:
        a.accumulate_grad(_unbroadcast(g, a.shape))
        b.accumulate_grad(_unbroadcast(g, b.shape))

    return _result(data, (a, b), "add", _bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data - b.data
    except ValueError:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from None

    def _bwd(g: Array) -> None:
        a.accumulate_grad(_unbroadcast(g, a.shape))
        b.accumulate_grad(-_unbroadcast(g, b.shape))

    return _result(data, (a, b), "sub", _bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product."""
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def _bwd(g: Array) -> None:
        a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _result(data, (a, b), "mul", _bwd)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar."""
    c = float(c)
    data = a.data * c

    def _bwd(g: Array) -> None:
        a.accumulate_grad(g * c)

    return _result(data, (a,), "scale", _bwd)


def relu(a: Tensor) -> Tensor:
    """max(x, 0); gradient passes where x > 0, is zero where x <= 0."""
    mask = a.data > 0
    data = np.where(mask, a.data, 0.0)

    def _bwd(g: Array) -> None:
        a.accumulate_grad(g * mask)

    return _result(data, (a,), "relu", _bwd)


# ---------------------------------------------------------------------------
# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def _bwd(g: Array) -> None:
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a.accumulate_grad(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b.accumulate_grad(_unbroadcast(gb, b.shape))

    return _result(data, (a, b), "matmul", _bwd)


# ---------------------------------------------------------------------------
# Convolution / pooling (3x3 same-padding conv, 2x2 ceil-mode max pool)


def _as_batched(x: Array, want_ndim: int) -> tuple[Array, bool]:
    if x.ndim == want_ndim:
        return x, True
    if x.ndim == want_ndim - 1:
        return x[None], False
    raise DimensionError(f"expected rank {want_ndim - 1} or {want_ndim} input, got shape {x.shape}")


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Stride-1 zero-padded 3x3 cross-correlation plus per-channel bias.

    ``x`` is ``(c_in, h, w)`` or ``(batch, c_in, h, w)``; ``kernels`` is
    ``(c_out, c_in, 3, 3)``; output keeps the spatial size ("same" padding).
    """
    if kernels.ndim != 4 or kernels.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d kernels must be (c_out, c_in, 3, 3), got {kernels.shape}")
    xb, batched = _as_batched(x.data, 4)
    n, c_in, h, w = xb.shape
    c_out = kernels.shape[0]
    if kernels.shape[1] != c_in:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.shape} has {c_in} channels, "
            f"kernels {kernels.shape} expect {kernels.shape[1]}")
    if bias.shape != (c_out,):
        raise DimensionError(f"conv2d bias must be ({c_out},), got {bias.shape}")

    padded = np.zeros((n, c_in, h + 2, w + 2))
    padded[:, :, 1:-1, 1:-1] = xb
    win = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, h * w, c_in * 9)
    k2 = kernels.data.reshape(c_out, c_in * 9)
    out = (cols @ k2.T + bias.data).transpose(0, 2, 1).reshape(n, c_out, h, w)
    if not batched:
        out = out[0]

    def _bwd(g: Array) -> None:
        g4 = g if batched else g[None]
        gcols = g4.reshape(n, c_out, h * w).transpose(0, 2, 1)  # (n, hw, c_out)
        if kernels.requires_grad:
            gk = np.tensordot(gcols, cols, axes=([0, 1], [0, 1]))  # (c_out, c_in*9)
            kernels.accumulate_grad(gk.reshape(kernels.shape))
        if bias.requires_grad:
            bias.accumulate_grad(g4.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gwin = (gcols @ k2).reshape(n, h, w, c_in, 3, 3).transpose(0, 3, 1, 2, 4, 5)
            gpad = np.zeros_like(padded)
            for di in range(3):
                for dj in range(3):
                    gpad[:, :, di:di + h, dj:dj + w] += gwin[:, :, :, :, di, dj]
            gx = gpad[:, :, 1:-1, 1:-1]
            x.accumulate_grad(gx if batched else gx[0])

    return _result(out, (x, kernels, bias), "conv2d", _bwd)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pool, stride 2, ceil mode (odd trailing edge -> 1-wide window).

    Gradient goes to the window argmax; ties break to the first position in
    row-major window order.
    """
    xb, batched = _as_batched(x.data, 4)
    n, c, h, w = xb.shape
    h2, w2 = math.ceil(h / 2), math.ceil(w / 2)
    padded = np.full((n, c, h2 * 2, w2 * 2), -np.inf)
    padded[:, :, :h, :w] = xb
    win = (padded.reshape(n, c, h2, 2, w2, 2)
                 .transpose(0, 1, 2, 4, 3, 5)
                 .reshape(n, c, h2, w2, 4))
    idx = win.argmax(axis=-1)  # first max in row-major window order
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    if not batched:
        out = out[0]

    def _bwd(g: Array) -> None:
        if not x.requires_grad:
            return
        g4 = g if batched else g[None]
        gwin = np.zeros((n, c, h2, w2, 4))
        np.put_along_axis(gwin, idx[..., None], g4[..., None], axis=-1)
        gpad = (gwin.reshape(n, c, h2, w2, 2, 2)
                    .transpose(0, 1, 2, 4, 3, 5)
                    .reshape(n, c, h2 * 2, w2 * 2))
        gx = gpad[:, :, :h, :w]
        x.accumulate_grad(gx if batched else gx[0])

    return _result(out, (x,), "maxpool2", _bwd)


# ---------------------------------------------------------------------------
# Lookup / structure ops


def gather_rows(table: Tensor, indices) -> Tensor:
    """Select rows of a 2-D table; output shape = indices.shape + (d,).

    Backward scatter-adds into the table, so duplicate indices accumulate.
    """
    if table.ndim != 2:
        raise DimensionError(f"gather_rows table must be 2-D, got shape {table.shape}")
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise DimensionError(f"gather_rows indices must be integers, got dtype {idx.dtype}")
    v = table.shape[0]
    if idx.size:
        bad = (idx < 0) | (idx >= v)
        if bad.any():
            raise IndexLookupError(int(idx[bad].flat[0]), v)
    data = table.data[idx]

    def _bwd(g: Array) -> None:
        if not table.requires_grad:
            return
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        table.accumulate_grad(gt)

    return _result(data, (table,), "gather_rows", _bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    """Concatenate along an axis; backward splits the gradient back."""
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def _bwd(g: Array) -> None:
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, stop)
            t.accumulate_grad(g[tuple(sl)])

    return _result(data, tensors, "concat", _bwd)


def transpose(a: Tensor, axes: Iterable[int] | None = None) -> Tensor:
    """Permute axes; default swaps the last two (matrix transpose)."""
    if axes is None:
        if a.ndim < 2:
            raise DimensionError(f"transpose default needs rank >= 2, got shape {a.shape}")
        axes = list(range(a.ndim - 2)) + [a.ndim - 1, a.ndim - 2]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    data = a.data.transpose(axes)

    def _bwd(g: Array) -> None:
        a.accumulate_grad(g.transpose(inverse))

    return _result(data, (a,), "transpose", _bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape) if isinstance(shape, (tuple, list)) else (shape,)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}") from None

    def _bwd(g: Array) -> None:
        a.accumulate_grad(g.reshape(a.shape))

    return _result(data, (a,), "reshape", _bwd)


def flatten(a: Tensor) -> Tensor:
    """Flatten to a 1-D vector."""
    return reshape(a, (-1,))


def mean(a: Tensor) -> Tensor:
    """Mean over all elements; returns a scalar tensor."""
    if a.size == 0:
        raise DimensionError("mean of an empty tensor")
    data = a.data.mean()
    inv = 1.0 / a.size

    def _bwd(g: Array) -> None:
        a.accumulate_grad(np.full(a.shape, float(g) * inv))

    return _result(np.asarray(data), (a,), "mean", _bwd)


def tensor_sum(a: Tensor) -> Tensor:
    """Sum over all elements; returns a scalar tensor."""
    data = a.data.sum()

    def _bwd(g: Array) -> None:
        a.accumulate_grad(np.full(a.shape, float(g)))

    return _result(np.asarray(data), (a,), "sum", _bwd)
