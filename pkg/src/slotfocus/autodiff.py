"""Dense tensors with define-by-run reverse-mode differentiation.

Every differentiable operation executed on a tensor that requires gradients
appends a node to the tape. Nodes carry a monotonically increasing sequence
number, so ``backward`` replays adjoint rules in exact reverse execution order
over the sub-graph reachable from the loss.

Broadcasting is limited to scalar operands and identical shapes. Anything else
has to be made explicit (``broadcast_rows``, ``reshape``).
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Node",
    "ShapeError",
    "NumericError",
    "no_grad",
    "grad_enabled",
    "default_dtype",
    "set_default_dtype",
    "tensor",
    "zeros",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "elementwise",
    "softmax",
    "log_softmax",
    "concat",
    "stack",
    "take_row",
    "pick",
    "reshape",
    "broadcast_rows",
    "sum",
    "cross_entropy",
    "lstm_cell",
    "slice_",
    "backward",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(FloatingPointError):
    """A non-finite value reached an operation that requires finite input."""


_state = threading.local()
_sequence = itertools.count()
_dtype = np.float64


def default_dtype():
    return _dtype


def set_default_dtype(dtype) -> None:
    """Select float64 (required for gradient checks) or float32."""
    global _dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _dtype = dtype


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Node:
    """One tape entry: the inputs of an operation and its adjoint rule."""

    __slots__ = ("seq", "inputs", "adjoint", "op")

    def __init__(self, inputs: Sequence["Tensor"], adjoint: Callable, op: str):
        self.seq = next(_sequence)
        self.inputs = tuple(inputs)
        self.adjoint = adjoint
        self.op = op


class Tensor:
    """A dense real array, optionally tracked for differentiation.

    Leaf tensors created with ``requires_grad=True`` own a ``grad`` buffer of
    the same shape, initialised to zeros. Gradients accumulate into it across
    backward passes until :meth:`zero_grad` is called.
    """

    __slots__ = ("data", "grad", "requires_grad", "node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 node: Node | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or _dtype)
        if arr.size == 0:
            raise ShapeError(f"zero-sized tensor of shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node = node
        self.name = name
        self.grad = np.zeros_like(arr) if requires_grad and node is None else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_dtype))


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=_dtype)


def _result(data: np.ndarray, inputs: Sequence[Tensor], adjoint: Callable, op: str) -> Tensor:
    """Wrap ``data`` and record a tape node when any input is tracked."""
    if grad_enabled() and any(t.requires_grad for t in inputs):
        return Tensor(data, requires_grad=True, node=Node(inputs, adjoint, op),
                      dtype=data.dtype)
    return Tensor(data, dtype=data.dtype)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op}: non-finite input")


# ----------------------------------------------------------------------------
# Linear algebra and structural operations


def matmul(a, b) -> Tensor:
    """Matrix product. Rank-1 operands act as row/column vectors (numpy rules)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul expects rank 1 or 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def adjoint(g):
        if A.ndim == 2 and B.ndim == 2:
            return g @ B.T, A.T @ g
        if A.ndim == 2:  # matrix @ vector
            return np.outer(g, B), A.T @ g
        if B.ndim == 2:  # vector @ matrix
            return B @ g, np.outer(A, g)
        return g * B, g * A

    return _result(A @ B, (a, b), adjoint, "matmul")


def concat(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeError(f"concat expects two vectors, got {a.shape} and {b.shape}")
    n = a.shape[0]
    return _result(np.concatenate([a.data, b.data]), (a, b),
                   lambda g: (g[:n], g[n:]), "concat")


def stack(vectors: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors as the rows of a matrix."""
    vectors = [_as_tensor(v) for v in vectors]
    if not vectors:
        raise ShapeError("stack of an empty sequence")
    shape = vectors[0].shape
    if len(shape) != 1 or any(v.shape != shape for v in vectors):
        raise ShapeError(f"stack expects equal-length vectors, got {[v.shape for v in vectors]}")
    return _result(np.stack([v.data for v in vectors]), vectors,
                   lambda g: tuple(g), "stack")


def take_row(matrix: Tensor, index: int) -> Tensor:
    """Row ``index`` of a matrix (embedding lookup). The adjoint is sparse."""
    if matrix.ndim != 2:
        raise ShapeError(f"take_row expects a matrix, got {matrix.shape}")
    rows = matrix.shape[0]
    if not 0 <= index < rows:
        raise IndexError(f"row {index} out of range for {rows} rows")
    return _result(matrix.data[index].copy(), (matrix,),
                   lambda g: (_RowGrad(index, g),), "take_row")


def pick(vector: Tensor, index: int) -> Tensor:
    """Scalar entry ``index`` of a vector."""
    if vector.ndim != 1:
        raise ShapeError(f"pick expects a vector, got {vector.shape}")
    n = vector.shape[0]

    def adjoint(g):
        out = np.zeros(n, dtype=vector.data.dtype)
        out[index] = g
        return (out,)

    return _result(vector.data[index].copy(), (vector,), adjoint, "pick")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    original = x.shape
    return _result(x.data.reshape(shape), (x,),
                   lambda g: (g.reshape(original),), "reshape")


def broadcast_rows(v: Tensor, rows: int) -> Tensor:
    """Repeat a vector as ``rows`` identical rows of a matrix."""
    if v.ndim != 1:
        raise ShapeError(f"broadcast_rows expects a vector, got {v.shape}")
    return _result(np.broadcast_to(v.data, (rows, v.shape[0])).copy(), (v,),
                   lambda g: (g.sum(axis=0),), "broadcast_rows")


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return _result(np.asarray(x.data.sum()), (x,),
                   lambda g: (np.full(shape, g, dtype=x.data.dtype),), "sum")


# ----------------------------------------------------------------------------
# Pointwise operations


def _broadcast_pair(a, b, op):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}")
    return a, b


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum())


def add(a, b) -> Tensor:
    a, b = _broadcast_pair(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _broadcast_pair(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _broadcast_pair(a, b, "mul")
    A, B = a.data, b.data
    return _result(A * B, (a, b),
                   lambda g: (_unbroadcast(g * B, a.shape), _unbroadcast(g * A, b.shape)),
                   "mul")


def neg(x) -> Tensor:
    x = _as_tensor(x)
    return _result(-x.data, (x,), lambda g: (-g,), "neg")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form never overflows, unlike 1 / (1 + exp(-z))
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    y = _sigmoid(x.data)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def exp(x) -> Tensor:
    x = _as_tensor(x)
    y = np.exp(x.data)
    return _result(y, (x,), lambda g: (g * y,), "exp")


def log(x) -> Tensor:
    x = _as_tensor(x)
    X = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(X)
    return _result(y, (x,), lambda g: (g / X,), "log")


_POINTWISE = {
    "add": add,
    "mul": mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "neg": neg,
}


def elementwise(op: str, *operands) -> Tensor:
    """Dispatch a pointwise operation by name."""
    try:
        fn = _POINTWISE[op]
    except KeyError:
        raise ValueError(f"unknown pointwise op {op!r}; choose from {sorted(_POINTWISE)}") from None
    return fn(*operands)


# ----------------------------------------------------------------------------
# Normalisation and losses


def _masked_logits(z: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return z
    return np.where(mask, z, -np.inf)


def _softmax_array(z: np.ndarray, mask=None) -> np.ndarray:
    z = _masked_logits(z, mask)
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax(logits: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Stable softmax of a vector.

    ``mask`` is an optional boolean vector; masked-out entries get exactly
    zero probability and receive no gradient.
    """
    logits = _as_tensor(logits)
    if logits.ndim != 1:
        raise ShapeError(f"softmax expects a vector, got {logits.shape}")
    _check_finite(logits.data, "softmax")
    p = _softmax_array(logits.data, mask)

    def adjoint(g):
        return (p * (g - np.dot(p, g)),)

    return _result(p, (logits,), adjoint, "softmax")


def log_softmax(logits: Tensor, mask: np.ndarray | None = None) -> Tensor:
    logits = _as_tensor(logits)
    if logits.ndim != 1:
        raise ShapeError(f"log_softmax expects a vector, got {logits.shape}")
    _check_finite(logits.data, "log_softmax")
    z = _masked_logits(logits.data, mask)
    shifted = z - z.max()
    lse = np.log(np.exp(shifted).sum())
    out = shifted - lse
    p = np.exp(out)

    def adjoint(g):
        gz = g - p * np.where(np.isfinite(out), g, 0.0).sum()
        return (np.where(np.isfinite(out), gz, 0.0),)

    return _result(out, (logits,), adjoint, "log_softmax")


def cross_entropy(logits: Tensor, target: int, mask: np.ndarray | None = None) -> Tensor:
    """``-log softmax(logits)[target]`` computed in log space.

    Working from log-probabilities avoids the underflow a ``log(p)`` of a
    tiny probability would hit, so no clamping floor is ever needed.
    """
    logits = _as_tensor(logits)
    _check_finite(logits.data, "cross_entropy")
    z = _masked_logits(logits.data, mask)
    if not np.isfinite(z[target]):
        raise ValueError(f"target {target} is masked out")
    shifted = z - z.max()
    e = np.exp(shifted)
    total = e.sum()
    value = np.log(total) - shifted[target]

    def adjoint(g):
        grad = e / total
        grad[target] -= 1.0
        return (g * grad,)

    return _result(np.asarray(value), (logits,), adjoint, "cross_entropy")


# ----------------------------------------------------------------------------
# Fused recurrent cell


def slice_(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous sub-vector ``x[start:stop]``."""
    if x.ndim != 1 or not 0 <= start < stop <= x.shape[0]:
        raise ShapeError(f"slice [{start}:{stop}] invalid for shape {x.shape}")
    n = x.shape[0]

    def adjoint(g):
        out = np.zeros(n, dtype=g.dtype)
        out[start:stop] = g
        return (out,)

    return _result(x.data[start:stop].copy(), (x,), adjoint, "slice")


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, W_x: Tensor, W_h: Tensor,
              b: Tensor, peep: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """One peephole LSTM step recorded as a single tape node.

    ``W_x`` (4H x n_in), ``W_h`` (4H x H) and ``b`` (4H) stack the input,
    forget, candidate and output blocks in that order. ``peep`` (3 x H) holds
    the input, forget and output peephole weights, or is ``None``. The input
    and forget gates look at the previous cell, the output gate at the new one.

    Returns ``(h_new, c_new)``, both slices of one joint ``[h; c]`` output.
    """
    H = h.shape[0]
    if x.ndim != 1 or W_x.shape != (4 * H, x.shape[0]):
        raise ShapeError(f"lstm_cell: W_x {W_x.shape} does not fit input {x.shape} with hidden {H}")
    if W_h.shape != (4 * H, H) or b.shape != (4 * H,) or c.shape != (H,):
        raise ShapeError("lstm_cell: recurrent parameter shapes do not match hidden size")
    if peep is not None and peep.shape != (3, H):
        raise ShapeError(f"lstm_cell: peephole shape {peep.shape} != {(3, H)}")
    X, Hp, Cp = x.data, h.data, c.data
    P = None if peep is None else peep.data
    z = W_x.data @ X + W_h.data @ Hp + b.data
    zi, zf, zc, zo = z[:H], z[H:2 * H], z[2 * H:3 * H], z[3 * H:]
    if P is not None:
        zi = zi + P[0] * Cp
        zf = zf + P[1] * Cp
    i = _sigmoid(zi)
    f = _sigmoid(zf)
    g = np.tanh(zc)
    c_new = f * Cp + i * g
    if P is not None:
        zo = zo + P[2] * c_new
    o = _sigmoid(zo)
    tc = np.tanh(c_new)
    h_new = o * tc

    def adjoint(grad):
        gh, gc = grad[:H], grad[H:]
        dzo = gh * tc * o * (1.0 - o)
        dcn = gc + gh * o * (1.0 - tc * tc)
        if P is not None:
            dcn = dcn + dzo * P[2]
        dzi = dcn * g * i * (1.0 - i)
        dzf = dcn * Cp * f * (1.0 - f)
        dzc = dcn * i * (1.0 - g * g)
        dz = np.concatenate([dzi, dzf, dzc, dzo])
        dc_prev = dcn * f
        if P is not None:
            dc_prev = dc_prev + dzi * P[0] + dzf * P[1]
        grads = (W_x.data.T @ dz, W_h.data.T @ dz, dc_prev,
                 np.outer(dz, X), np.outer(dz, Hp), dz)
        if P is None:
            return grads
        return grads + (np.stack([dzi * Cp, dzf * Cp, dzo * c_new]),)

    inputs = (x, h, c, W_x, W_h, b) + (() if peep is None else (peep,))
    joint = _result(np.concatenate([h_new, c_new]), inputs, adjoint, "lstm_cell")
    if not joint.requires_grad:
        return Tensor(h_new, dtype=h_new.dtype), Tensor(c_new, dtype=c_new.dtype)
    return slice_(joint, 0, H), slice_(joint, H, 2 * H)


# ----------------------------------------------------------------------------
# Backward pass


class _RowGrad:
    """Sparse cotangent contribution to a single row of a matrix."""

    __slots__ = ("index", "value")

    def __init__(self, index: int, value: np.ndarray):
        self.index = index
        self.value = value


def _tape_for(loss: Tensor) -> list[Node]:
    """Nodes reachable from ``loss``, newest first."""
    seen: set[int] = set()
    nodes: list[Node] = []
    pending = [loss.node]
    while pending:
        node = pending.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        pending.extend(t.node for t in node.inputs if t.node is not None and t.requires_grad)
    nodes.sort(key=lambda n: n.seq, reverse=True)
    return nodes


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable tracked leaf.

    Gradients add up (``+=``) so weights shared across time steps receive the
    sum of all their contributions, as do repeated backward calls.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")
    _check_finite(loss.data, "backward")
    if loss.node is None:
        loss.grad += 1.0
        return

    # Interior cotangents are keyed by the producing node, leaf ones by tensor.
    interior: dict[int, np.ndarray] = {id(loss.node): np.ones_like(loss.data)}
    leaves: dict[int, tuple[Tensor, np.ndarray]] = {}

    for node in _tape_for(loss):
        g = interior.pop(id(node), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.adjoint(g)):
            if not inp.requires_grad or gi is None:
                continue
            if inp.node is None:
                entry = leaves.get(id(inp))
                if entry is None:
                    entry = (inp, np.zeros_like(inp.data))
                    leaves[id(inp)] = entry
                buf = entry[1]
            else:
                buf = interior.get(id(inp.node))
                if buf is None:
                    buf = np.zeros_like(inp.data)
                    interior[id(inp.node)] = buf
            if isinstance(gi, _RowGrad):
                buf[gi.index] += gi.value
            else:
                buf += gi

    for t, g in leaves.values():
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g
