"""Dense-tensor reverse-mode automatic differentiation on a recording tape.

Tensors wrap float64 numpy arrays. Every operation validates its operands,
computes the result eagerly, and (when any operand requires gradients)
records a backward closure on the active Graph. ``backward`` replays the
tape in exact reverse recording order, accumulating gradients into every
tensor that requires them. ``grad_check`` verifies any recorded computation
against central finite differences.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ArithmeticError):
    """An operation produced (or was asked to produce) non-finite values."""


# When enabled, every op scans its output for NaN/Inf. Cheap at the array
# sizes this engine targets, so it defaults to on.
_debug_checks = True


def set_debug_checks(enabled: bool) -> None:
    global _debug_checks
    _debug_checks = bool(enabled)


def debug_checks_enabled() -> bool:
    return _debug_checks


_node_ids = itertools.count()


class Tensor:
    """A float64 array plus gradient bookkeeping.

    ``grad`` stays ``None`` until a backward pass deposits something.
    ``node_id`` is a process-wide identity; ``graph`` points at the Graph
    that recorded the producing op (``None`` for leaves).
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id", "graph")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.node_id = next(_node_ids)
        self.graph = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


class Graph:
    """Ordered record of operations; the tape replayed by ``backward``.

    A graph may be used as a context manager to make it the active
    recording target. Each graph supports one backward pass over what it
    recorded; ``backward`` consumes the entries it replays.
    """

    def __init__(self):
        self.ops = []  # list of (output Tensor, backward closure)

    def record(self, out: Tensor, backward_fn) -> None:
        out.graph = self
        self.ops.append((out, backward_fn))

    def clear(self) -> None:
        self.ops.clear()

    def __enter__(self):
        _graph_stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _graph_stack.pop()
        return False


_graph_stack = [Graph()]


def active_graph() -> Graph:
    return _graph_stack[-1]


def zero_grads(params) -> None:
    tensors = params.values() if isinstance(params, dict) else params
    for p in tensors:
        p.grad = None


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def _make(data: np.ndarray, parents, backward_fn, op_name: str) -> Tensor:
    if _debug_checks and not np.all(np.isfinite(data)):
        raise NumericError(f"{op_name} produced non-finite values")
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        active_graph().record(out, backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every tensor the scalar ``loss`` depends on.

    Replays the recording graph in exact reverse order, then consumes the
    replayed entries, so parameter gradients accumulate across successive
    forward/backward rounds while intermediate results cannot be
    double-counted.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss.grad is None:
        loss.grad = np.ones_like(loss.data)
    else:
        loss.grad = loss.grad + np.ones_like(loss.data)
    graph = loss.graph
    if graph is None:
        return  # loss is a leaf; its own gradient is all there is
    for out, backward_fn in reversed(graph.ops):
        if out.grad is not None:
            backward_fn(out)
    graph.clear()


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul requires rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def backward_fn(out):
        _accumulate(a, out.grad @ b.data.T)
        _accumulate(b, a.data.T @ out.grad)

    return _make(out_data, (a, b), backward_fn, "matmul")


def outer(u: Tensor, v: Tensor) -> Tensor:
    if u.data.ndim != 1 or v.data.ndim != 1:
        raise DimensionError(f"outer requires rank-1 operands, got {u.shape} and {v.shape}")
    out_data = np.outer(u.data, v.data)

    def backward_fn(out):
        _accumulate(u, out.grad @ v.data)
        _accumulate(v, u.data @ out.grad)

    return _make(out_data, (u, v), backward_fn, "outer")


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"transpose requires a rank-2 tensor, got {x.shape}")
    out_data = x.data.T.copy()

    def backward_fn(out):
        _accumulate(x, out.grad.T)

    return _make(out_data, (x,), backward_fn, "transpose")


def softmax_lastdim(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted for stability."""
    if x.data.size == 0:
        raise DimensionError("softmax_lastdim on an empty tensor")
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    exps = np.exp(shifted)
    y = exps / np.sum(exps, axis=-1, keepdims=True)

    def backward_fn(out):
        g = out.grad
        dot = np.sum(g * y, axis=-1, keepdims=True)
        _accumulate(x, y * (g - dot))

    return _make(y, (x,), backward_fn, "softmax_lastdim")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _binary(op_name, a: Tensor, b, fwd, da, db) -> Tensor:
    """Shared shape/broadcast handling for binary elementwise ops.

    Operands must have equal shapes, or one side must be a plain number
    or a single-element tensor (scalar broadcast; its gradient is the sum
    of the upstream gradient).
    """
    if not isinstance(b, Tensor):
        c = float(b)
        out_data = fwd(a.data, c)

        def backward_const(out):
            _accumulate(a, da(out.grad, a.data, c))

        return _make(out_data, (a,), backward_const, op_name)

    if a.shape == b.shape:
        out_data = fwd(a.data, b.data)

        def backward_same(out):
            _accumulate(a, da(out.grad, a.data, b.data))
            _accumulate(b, db(out.grad, a.data, b.data))

        return _make(out_data, (a, b), backward_same, op_name)

    if b.data.size == 1:
        bval = b.data.reshape(())
        out_data = fwd(a.data, bval)

        def backward_bscalar(out):
            _accumulate(a, da(out.grad, a.data, bval))
            _accumulate(b, np.sum(db(out.grad, a.data, bval)).reshape(b.shape))

        return _make(out_data, (a, b), backward_bscalar, op_name)

    if a.data.size == 1:
        aval = a.data.reshape(())
        out_data = fwd(aval, b.data)

        def backward_ascalar(out):
            _accumulate(a, np.sum(da(out.grad, aval, b.data)).reshape(a.shape))
            _accumulate(b, db(out.grad, aval, b.data))

        return _make(out_data, (a, b), backward_ascalar, op_name)

    raise DimensionError(f"{op_name}: shapes {a.shape} and {b.shape} are neither equal nor scalar-broadcastable")


def add(a, b):
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary("mul", a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    denom = b.data if isinstance(b, Tensor) else np.asarray(b, dtype=np.float64)
    if np.any(denom == 0.0):
        raise NumericError("div: division by zero")
    return _binary("div", a, b, lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out_data = x.data * c

    def backward_fn(out):
        _accumulate(x, out.grad * c)

    return _make(out_data, (x,), backward_fn, "scale")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward_fn(out):
        _accumulate(x, out.grad * (1.0 - y * y))

    return _make(y, (x,), backward_fn, "tanh")


def sigmoid(x: Tensor) -> Tensor:
    # branch on sign so exp never overflows
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                 np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def backward_fn(out):
        _accumulate(x, out.grad * y * (1.0 - y))

    return _make(y, (x,), backward_fn, "sigmoid")


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0.0)

    def backward_fn(out):
        _accumulate(x, out.grad * (x.data > 0.0))

    return _make(y, (x,), backward_fn, "relu")


_ELEMENTWISE = {}


def elementwise(kind: str, *operands) -> Tensor:
    """Dispatch by kind name: add, sub, mul, div, tanh, sigmoid, relu, scale."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(*operands)


_ELEMENTWISE.update(add=add, sub=sub, mul=mul, div=div,
                    tanh=tanh, sigmoid=sigmoid, relu=relu, scale=scale)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _check_axis(x: Tensor, axis: int) -> None:
    if not (-x.data.ndim <= axis < x.data.ndim):
        raise DimensionError(f"axis {axis} invalid for shape {x.shape}")


def reduce_sum(x: Tensor, axis=None) -> Tensor:
    if axis is not None:
        _check_axis(x, axis)
    out_data = np.sum(x.data, axis=axis)

    def backward_fn(out):
        if axis is None:
            _accumulate(x, np.broadcast_to(out.grad, x.shape).copy())
        else:
            _accumulate(x, np.broadcast_to(np.expand_dims(out.grad, axis), x.shape).copy())

    return _make(out_data, (x,), backward_fn, "reduce_sum")


def reduce_mean(x: Tensor, axis=None) -> Tensor:
    if axis is not None:
        _check_axis(x, axis)
    count = x.data.size if axis is None else x.shape[axis]
    if count == 0:
        raise DimensionError("reduce_mean over an empty axis")
    out_data = np.mean(x.data, axis=axis)

    def backward_fn(out):
        if axis is None:
            _accumulate(x, np.broadcast_to(out.grad / count, x.shape).copy())
        else:
            _accumulate(x, np.broadcast_to(np.expand_dims(out.grad, axis) / count, x.shape).copy())

    return _make(out_data, (x,), backward_fn, "reduce_mean")


def max_over_axis(x: Tensor, axis: int) -> Tensor:
    """Max along an axis; gradient flows to the first maximal element only."""
    _check_axis(x, axis)
    out_data = np.max(x.data, axis=axis)
    argmax = np.argmax(x.data, axis=axis)  # first occurrence on ties

    def backward_fn(out):
        g = np.zeros_like(x.data)
        np.put_along_axis(g, np.expand_dims(argmax, axis),
                          np.expand_dims(out.grad, axis), axis=axis)
        _accumulate(x, g)

    return _make(out_data, (x,), backward_fn, "max_over_axis")


_REDUCE = {"sum": reduce_sum, "mean": reduce_mean, "max_over_axis": max_over_axis}


def reduce(kind: str, x: Tensor, axis=None) -> Tensor:
    try:
        fn = _REDUCE[kind]
    except KeyError:
        raise ValueError(f"unknown reduce kind {kind!r}") from None
    if kind == "max_over_axis":
        return fn(x, axis)
    return fn(x, axis=axis)


# ---------------------------------------------------------------------------
# gather / scatter and structural ops
# ---------------------------------------------------------------------------

def embedding_lookup(table: Tensor, ids) -> Tensor:
    if table.data.ndim != 2:
        raise DimensionError(f"embedding table must be rank-2, got {table.shape}")
    ids = [int(i) for i in ids]
    vocab = table.shape[0]
    for i in ids:
        if not 0 <= i < vocab:
            raise IndexError(f"embedding id {i} out of range [0, {vocab})")
    idx = np.asarray(ids, dtype=np.intp)
    out_data = table.data[idx] if ids else np.zeros((0, table.shape[1]))

    def backward_fn(out):
        if not table.requires_grad:
            return
        g = np.zeros_like(table.data)
        np.add.at(g, idx, out.grad)
        _accumulate(table, g)

    return _make(out_data, (table,), backward_fn, "embedding_lookup")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")
    out_data = x.data.reshape(shape).copy()

    def backward_fn(out):
        _accumulate(x, out.grad.reshape(x.shape))

    return _make(out_data, (x,), backward_fn, "reshape")


def stack_rows(rows) -> Tensor:
    """Stack rank-1 tensors of equal length into a matrix."""
    rows = list(rows)
    if not rows:
        raise DimensionError("stack_rows needs at least one row")
    width = rows[0].data.size
    for r in rows:
        if r.data.ndim != 1 or r.data.size != width:
            raise DimensionError("stack_rows requires equal-length rank-1 tensors")
    out_data = np.stack([r.data for r in rows])

    def backward_fn(out):
        for i, r in enumerate(rows):
            _accumulate(r, out.grad[i])

    return _make(out_data, tuple(rows), backward_fn, "stack_rows")


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim < 1:
        raise DimensionError("slice_rows needs rank >= 1")
    if not (0 <= start <= stop <= x.shape[0]):
        raise DimensionError(f"slice_rows [{start}:{stop}] out of bounds for shape {x.shape}")
    out_data = x.data[start:stop].copy()

    def backward_fn(out):
        g = np.zeros_like(x.data)
        g[start:stop] = out.grad
        _accumulate(x, g)

    return _make(out_data, (x,), backward_fn, "slice_rows")


def pad_rows(x: Tensor, total_rows: int) -> Tensor:
    """Append zero rows along axis 0 until the tensor has total_rows rows."""
    if x.data.ndim < 1:
        raise DimensionError("pad_rows needs rank >= 1")
    n = x.shape[0]
    if total_rows < n:
        raise DimensionError(f"pad_rows target {total_rows} smaller than current {n}")
    out_data = np.zeros((total_rows,) + x.shape[1:])
    out_data[:n] = x.data

    def backward_fn(out):
        _accumulate(x, out.grad[:n])

    return _make(out_data, (x,), backward_fn, "pad_rows")


def concat(vectors) -> Tensor:
    """Concatenate rank-1 tensors."""
    vectors = list(vectors)
    if not vectors:
        raise DimensionError("concat needs at least one vector")
    for v in vectors:
        if v.data.ndim != 1:
            raise DimensionError("concat requires rank-1 tensors")
    out_data = np.concatenate([v.data for v in vectors])
    offsets = np.cumsum([0] + [v.data.size for v in vectors])

    def backward_fn(out):
        for i, v in enumerate(vectors):
            _accumulate(v, out.grad[offsets[i]:offsets[i + 1]])

    return _make(out_data, tuple(vectors), backward_fn, "concat")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

LOG_CLAMP = 1e-12


def cross_entropy(pred_dist: Tensor, target_class: int) -> Tensor:
    """Negative log-likelihood of target_class under a rank-1 distribution.

    The probability is clamped at LOG_CLAMP before the log so a confidently
    wrong prediction yields a large finite loss instead of infinity.
    """
    if pred_dist.data.ndim != 1:
        raise DimensionError(f"cross_entropy expects a rank-1 distribution, got {pred_dist.shape}")
    if abs(float(np.sum(pred_dist.data)) - 1.0) > 1e-6:
        raise ValueError("cross_entropy: distribution does not sum to 1 within 1e-6")
    target_class = int(target_class)
    if not 0 <= target_class < pred_dist.data.size:
        raise IndexError(f"class index {target_class} out of range [0, {pred_dist.data.size})")
    p = float(pred_dist.data[target_class])
    clamped = max(p, LOG_CLAMP)
    out_data = np.asarray(-np.log(clamped))

    def backward_fn(out):
        g = np.zeros_like(pred_dist.data)
        if p > LOG_CLAMP:
            g[target_class] = -float(out.grad) / p
        _accumulate(pred_dist, g)

    return _make(out_data, (pred_dist,), backward_fn, "cross_entropy")


def squared_error(pred: Tensor, target: float) -> Tensor:
    if pred.data.size != 1:
        raise DimensionError(f"squared_error expects a scalar prediction, got shape {pred.shape}")
    target = float(target)
    diff = float(pred.data.reshape(())) - target
    out_data = np.asarray(diff * diff)

    def backward_fn(out):
        _accumulate(pred, (2.0 * diff * out.grad).reshape(pred.shape))

    return _make(out_data, (pred,), backward_fn, "squared_error")


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckEntry:
    name: str
    checked_elements: int
    max_rel_error: float
    worst_index: int
    passed: bool


@dataclass
class GradCheckReport:
    entries: list = field(default_factory=list)
    h: float = 1e-5
    tol: float = 1e-4

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def failures(self):
        return [e.name for e in self.entries if not e.passed]

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        lines = [f"grad_check {status}: max rel error {self.max_rel_error:.3e} (tol {self.tol:g}, h {self.h:g})"]
        for e in self.entries:
            mark = "ok " if e.passed else "BAD"
            lines.append(f"  [{mark}] {e.name}: {e.max_rel_error:.3e} over {e.checked_elements} elements")
        return "\n".join(lines)


# Guard keeps the relative error stable when both gradients are ~0; finite
# difference noise on a true-zero gradient then reads as ~1e-6, not ~1.
_REL_GUARD = 1e-3


def _loss_value(build_loss) -> float:
    with Graph():
        t = build_loss()
    v = float(t.data.reshape(()))
    if not np.isfinite(v):
        raise NumericError("non-finite loss value while probing")
    return v


def grad_check(build_loss, params, h: float = 1e-5, tol: float = 1e-4,
               max_elements_per_tensor: int = 100, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of build_loss() against central differences.

    ``build_loss`` must deterministically rebuild the computation from the
    current contents of ``params`` (a name -> Tensor mapping). Tensors larger
    than ``max_elements_per_tensor`` are probed on a fixed-seed sample of
    that many elements.
    """
    if not isinstance(params, dict):
        params = {f"param{i}": p for i, p in enumerate(params)}
    zero_grads(params)
    with Graph():
        loss = build_loss()
        backward(loss)
    analytic = {}
    for name, p in params.items():
        analytic[name] = np.zeros_like(p.data) if p.grad is None else p.grad.copy()

    rng = np.random.default_rng(seed)
    report = GradCheckReport(h=h, tol=tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if n > max_elements_per_tensor:
            indices = np.sort(rng.choice(n, size=max_elements_per_tensor, replace=False))
        else:
            indices = np.arange(n)
        worst = 0.0
        worst_idx = -1
        a_flat = analytic[name].reshape(-1)
        for idx in indices:
            saved = flat[idx]
            try:
                flat[idx] = saved + h
                f_plus = _loss_value(build_loss)
                flat[idx] = saved - h
                f_minus = _loss_value(build_loss)
            finally:
                flat[idx] = saved
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(a_flat[idx])
            rel = abs(a - numeric) / max(abs(a) + abs(numeric), _REL_GUARD)
            if rel > worst:
                worst = rel
                worst_idx = int(idx)
        report.entries.append(GradCheckEntry(name, len(indices), worst, worst_idx, worst < tol))
    return report
