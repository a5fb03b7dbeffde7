"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable operation whose inputs require gradients appends a
node to the active :class:`Tape`.  :func:`backward` walks the nodes that
lead to the loss in reverse order and then consumes the tape.

Backward rules live in the ``BACKWARD`` registry keyed by op name, so a
single rule can be swapped out (the gradcheck mutation test does this).
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class Tensor:
    """An n-dimensional array that optionally tracks its gradient."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = DEFAULT_DTYPE
        # always copy so callers never alias our buffer
        self.data = np.array(data, dtype=dtype, copy=True)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    saved: dict = field(default_factory=dict)
    # requires_grad of each input at record time; later toggling does not leak grads
    needs: tuple[bool, ...] = ()


class Tape:
    """Append-only record of operations performed on grad-requiring tensors."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.enabled = True

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


_tapes: list[Tape] = [Tape()]


def current_tape() -> Tape:
    return _tapes[-1]


@contextlib.contextmanager
def new_tape():
    """Run a block against a fresh tape, restoring the previous one after."""
    tape = Tape()
    _tapes.append(tape)
    try:
        yield tape
    finally:
        _tapes.pop()


@contextlib.contextmanager
def no_grad():
    """Disable recording; ops inside produce constant tensors."""
    tape = current_tape()
    prev, tape.enabled = tape.enabled, False
    try:
        yield
    finally:
        tape.enabled = prev


def _emit(op: str, inputs: Sequence[Tensor], value: np.ndarray, **saved) -> Tensor:
    track = current_tape().enabled and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = value
    out.requires_grad = track
    out.grad = None
    out.name = ""
    if track:
        current_tape().record(Node(op, tuple(inputs), out, saved,
                                   tuple(t.requires_grad for t in inputs)))
    return out


def _mismatch(op: str, a: tuple, b: tuple) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {list(a)} and {list(b)}")


def _check_trailing(op: str, a: Tensor, b: Tensor) -> None:
    # bias-style broadcast only: the smaller operand must equal a trailing slice
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    small, big = (sb, sa) if len(sb) <= len(sa) else (sa, sb)
    if len(small) == len(big) or big[len(big) - len(small):] != small:
        raise _mismatch(op, sa, sb)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


# ---------------------------------------------------------------------------
# forward ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _mismatch("matmul", a.shape, b.shape)
    return _emit("matmul", (a, b), a.data @ b.data)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_trailing("add", a, b)
    return _emit("add", (a, b), a.data + b.data)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_trailing("mul", a, b)
    return _emit("mul", (a, b), a.data * b.data)


def scale(a: Tensor, c: float) -> Tensor:
    return _emit("scale", (a,), a.data * a.data.dtype.type(c), c=float(c))


def relu(a: Tensor) -> Tensor:
    return _emit("relu", (a,), np.maximum(a.data, 0))


def tanh(a: Tensor) -> Tensor:
    return _emit("tanh", (a,), np.tanh(a.data))


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors the op name
    return _emit("abs", (a,), np.abs(a.data))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log: input must be strictly positive")
    return _emit("log", (a,), np.log(a.data))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return _emit("softmax", (a,), e / e.sum(axis=-1, keepdims=True))


def log_softmax(a: Tensor) -> Tensor:
    """Numerically stable log of softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return _emit("log_softmax", (a,), out)


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if not -ndim <= axis < ndim:
        raise ShapeError(f"reduction axis {axis} out of range for ndim {ndim}")
    return axis % ndim


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    axis = _norm_axis(axis, a.ndim)
    return _emit("sum", (a,), np.asarray(a.data.sum(axis=axis), dtype=a.dtype), axis=axis)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    axis = _norm_axis(axis, a.ndim)
    return _emit("mean", (a,), np.asarray(a.data.mean(axis=axis), dtype=a.dtype), axis=axis)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: no inputs")
    ref = tensors[0].shape
    axis = _norm_axis(axis, len(ref))
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            x != y for i, (x, y) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise _mismatch("concat", ref, t.shape)
    sizes = [t.shape[axis] for t in tensors]
    return _emit("concat", tensors, np.concatenate([t.data for t in tensors], axis=axis),
                 axis=axis, sizes=sizes)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape).copy()
    except ValueError:
        raise _mismatch("reshape", a.shape, shape) from None
    return _emit("reshape", (a,), out)


def conv2d(x: Tensor, w: Tensor, padding: int | None = None) -> Tensor:
    """Stride-1 2-D convolution (cross-correlation), NCHW input, OIKK kernel.

    ``padding`` defaults to ``k // 2``, which preserves spatial size for odd k.
    """
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise _mismatch("conv2d", x.shape, w.shape)
    k = w.shape[2]
    p = k // 2 if padding is None else padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    if xp.shape[2] < k or xp.shape[3] < k:
        raise _mismatch("conv2d", x.shape, w.shape)
    # windows: [n, c, h_out, w_out, k, k]
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    out = np.einsum("nchwij,ocij->nohw", win, w.data, optimize=True)
    return _emit("conv2d", (x, w), out.astype(x.dtype, copy=False), pad=p)


# ---------------------------------------------------------------------------
# backward rules: fn(node, grad_out) -> tuple of grads (None for no-grad inputs)


def _bw_matmul(node, g):
    a, b = node.inputs
    return g @ b.data.T, a.data.T @ g


def _bw_add(node, g):
    a, b = node.inputs
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _bw_mul(node, g):
    a, b = node.inputs
    return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)


def _bw_scale(node, g):
    return (g * node.saved["c"],)


def _bw_relu(node, g):
    return (g * (node.inputs[0].data > 0),)


def _bw_tanh(node, g):
    y = node.output.data
    return (g * (1 - y * y),)


def _bw_abs(node, g):
    return (g * np.sign(node.inputs[0].data),)


def _bw_log(node, g):
    return (g / node.inputs[0].data,)


def _bw_softmax(node, g):
    y = node.output.data
    return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)


def _bw_log_softmax(node, g):
    p = np.exp(node.output.data)
    return (g - p * g.sum(axis=-1, keepdims=True),)


def _bw_sum(node, g):
    (a,) = node.inputs
    axis = node.saved["axis"]
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def _bw_mean(node, g):
    (a,) = node.inputs
    axis = node.saved["axis"]
    count = a.data.size if axis is None else a.shape[axis]
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / count, a.shape).copy(),)


def _bw_concat(node, g):
    bounds = np.cumsum(node.saved["sizes"])[:-1]
    return tuple(np.split(g, bounds, axis=node.saved["axis"]))


def _bw_reshape(node, g):
    return (g.reshape(node.inputs[0].shape),)


def _bw_conv2d(node, g):
    x, w = node.inputs
    p = node.saved["pad"]
    k = w.shape[2]
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    gw = np.einsum("nohw,nchwij->ocij", g, win, optimize=True)
    # input grad = full correlation of g with the flipped kernel
    gp = np.pad(g, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    gwin = np.lib.stride_tricks.sliding_window_view(gp, (k, k), axis=(2, 3))
    gxp = np.einsum("nohwij,ocij->nchw", gwin, w.data[:, :, ::-1, ::-1], optimize=True)
    h, wd = x.shape[2], x.shape[3]
    gx = gxp[:, :, p:p + h, p:p + wd]
    return gx, gw


BACKWARD: dict[str, Callable] = {
    "matmul": _bw_matmul,
    "add": _bw_add,
    "mul": _bw_mul,
    "scale": _bw_scale,
    "relu": _bw_relu,
    "tanh": _bw_tanh,
    "abs": _bw_abs,
    "log": _bw_log,
    "softmax": _bw_softmax,
    "log_softmax": _bw_log_softmax,
    "sum": _bw_sum,
    "mean": _bw_mean,
    "concat": _bw_concat,
    "reshape": _bw_reshape,
    "conv2d": _bw_conv2d,
}


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable leaf.

    Intermediate (recorded) tensors also receive their grad.  The active
    tape is consumed.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {list(loss.shape)}")
    tape = current_tape()
    if not loss.requires_grad:
        tape.clear()
        raise ValueError("backward: loss does not depend on any grad-requiring tensor")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        node.output.grad = g
        in_grads = BACKWARD[node.op](node, g)
        for t, need, gi in zip(node.inputs, node.needs, in_grads):
            if not need or gi is None:
                continue
            gi = np.asarray(gi, dtype=t.dtype)
            key = id(t)
            grads[key] = grads[key] + gi if key in grads else gi
    # whatever remains in grads belongs to leaves (tensors not produced on this tape)
    leaves = {}
    for node in tape.nodes:
        for t, need in zip(node.inputs, node.needs):
            if need and id(t) in grads:
                leaves[id(t)] = t
    for key, t in leaves.items():
        g = grads[key]
        t.grad = g.copy() if t.grad is None else t.grad + g
    tape.clear()
