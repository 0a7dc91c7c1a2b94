"""Dense tensors with reverse-mode automatic differentiation.

A deliberately small op set: matrix products (with stacked batch
broadcasting), elementwise add/mul/scale/relu/abs/exp/log, mean and sum
reductions, reshape/slice, and a 1-D temporal convolution. Everything is
backed by numpy arrays, 64-bit by default (float32 is opt-in per tensor).

Gradients are recorded on an explicit :class:`Tape`. Ops only record when a
tape is active and some input participates in gradient tracking, so
inference runs tape-free at full speed::

    w = Tensor(init, requires_grad=True)
    with Tape():
        loss = reduce_mean(mul(w, w))
    backward(loss)          # populates w.grad, clears the tape

A tape and the tensors recorded on it are a single-threaded unit of work;
independent tapes may run on separate threads (the active-tape stack is
thread-local).
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError

DEFAULT_DTYPE = np.float64

_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf detection after every forward op (off by default)."""
    global _debug_checks
    _debug_checks = bool(enabled)


class Tensor:
    """A dense n-d array plus optional gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
        if _debug_checks and not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite values in tensor data")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; the module-level functions are the real API.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return sub(self, other)


class Tape:
    """Ordered record of executed ops, in execution order.

    Execution order is a topological order of the compute graph (an op's
    inputs always exist before it runs), so :func:`backward` can walk the
    record once, in reverse.
    """

    _local = threading.local()

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape context exited out of order")
        stack.pop()
        return False


def _tape_stack() -> list:
    stack = getattr(Tape._local, "stack", None)
    if stack is None:
        stack = []
        Tape._local.stack = stack
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def from_op(
    data: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Wrap an op result, recording it on the active tape when needed.

    ``backward_fn`` maps the output gradient to one gradient (or None) per
    input, each matching that input's shape. Custom differentiable ops in
    other modules are built on this hook.
    """
    out = Tensor(data, dtype=data.dtype)
    if _debug_checks and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite values produced by op")
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape._nodes.append((out, tuple(inputs), backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every gradient-tracking tensor behind ``loss``.

    ``loss`` must be a recorded scalar. Nodes are visited exactly once, in
    reverse execution order; accumulation order is fixed, so repeated runs
    over an identical graph produce bit-identical gradients. The tape is
    cleared afterwards.
    """
    if loss.data.ndim != 0:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None or not tape._nodes:
        raise ValueError("loss was not recorded on a non-empty tape")
    loss.grad = np.ones_like(loss.data)
    for out, inputs, backward_fn in reversed(tape._nodes):
        g = out.grad
        if g is None:
            continue
        grads = backward_fn(g)
        for t, gt in zip(inputs, grads):
            if gt is None or not t.requires_grad:
                continue
            if gt.shape != t.data.shape:
                raise ShapeError(
                    f"gradient shape {gt.shape} does not match tensor shape {t.shape}"
                )
            if t.grad is None:
                t.grad = gt.copy()
            else:
                t.grad = t.grad + gt
    tape._nodes.clear()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy-style stacked broadcasting on batch dims."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch dims incompatible: {a.shape} @ {b.shape}") from exc

    def backward_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return from_op(data, (a, b), backward_fn)


def _check_elementwise(a: Tensor, b: Tensor, name: str) -> None:
    # Only exact-match and scalar broadcast; keeps gradient rules auditable.
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} are not compatible")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "add")
    data = a.data + b.data

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return from_op(data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_elementwise(a, b, "mul")
    data = a.data * b.data

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return from_op(data, (a, b), backward_fn)


def scale(a, factor: float) -> Tensor:
    """Multiply by a plain (non-learnable) scalar."""
    a = _as_tensor(a)
    factor = float(factor)
    data = a.data * factor

    def backward_fn(g):
        return (g * factor,)

    return from_op(data, (a,), backward_fn)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0  # gradient at exactly 0 is defined as 0
    data = np.where(mask, a.data, 0.0)

    def backward_fn(g):
        return (g * mask,)

    return from_op(data, (a,), backward_fn)


def abs_(a) -> Tensor:
    a = _as_tensor(a)
    data = np.abs(a.data)
    sign = np.sign(a.data)

    def backward_fn(g):
        return (g * sign,)

    return from_op(data, (a,), backward_fn)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    data = np.exp(a.data)

    def backward_fn(g):
        return (g * data,)

    return from_op(data, (a,), backward_fn)


def log(a) -> Tensor:
    a = _as_tensor(a)
    data = np.log(a.data)

    def backward_fn(g):
        return (g / a.data,)

    return from_op(data, (a,), backward_fn)


def _normalize_axes(axes, ndim: int, allow_empty: bool) -> tuple[int, ...]:
    if axes is None:
        axes = range(ndim)
    axes = tuple(axes)
    if not axes and not allow_empty:
        raise ValueError("reduction needs at least one axis")
    canon = []
    for ax in axes:
        ax = int(ax)
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for {ndim}-d tensor")
        canon.append(ax % ndim)
    if len(set(canon)) != len(canon):
        raise ValueError(f"duplicate axes in {axes}")
    return tuple(sorted(canon))


def reduce_mean(a, axes: Iterable[int] | None = None) -> Tensor:
    """Arithmetic mean over ``axes`` (all axes when None; no axes: identity)."""
    a = _as_tensor(a)
    axes = _normalize_axes(axes, a.ndim, allow_empty=True)
    if not axes:
        return a
    count = 1
    for ax in axes:
        n = a.shape[ax]
        if n == 0:
            raise ValueError(f"cannot take mean over empty axis {ax}")
        count *= n
    data = a.data.mean(axis=axes)

    def backward_fn(g):
        ge = np.expand_dims(g, axes)
        return (np.broadcast_to(ge, a.shape) / count,)

    return from_op(data, (a,), backward_fn)


def reduce_sum(a, axes: Iterable[int] | None = None) -> Tensor:
    a = _as_tensor(a)
    axes = _normalize_axes(axes, a.ndim, allow_empty=True)
    if not axes:
        return a
    data = a.data.sum(axis=axes)

    def backward_fn(g):
        ge = np.expand_dims(g, axes)
        return (np.broadcast_to(ge, a.shape).copy(),)

    return from_op(data, (a,), backward_fn)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(n) for n in shape)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from exc

    def backward_fn(g):
        return (g.reshape(a.shape),)

    return from_op(data, (a,), backward_fn)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis; the gradient scatters back into zeros."""
    a = _as_tensor(a)
    if not 0 <= axis < a.ndim:
        raise ShapeError(f"slice axis {axis} out of range for shape {a.shape}")
    index = tuple(slice(None) if d != axis else slice(start, stop) for d in range(a.ndim))
    data = a.data[index]
    if data.shape[axis] == 0:
        raise ValueError(f"empty slice [{start}:{stop}] along axis {axis} of {a.shape}")

    def backward_fn(g):
        ga = np.zeros_like(a.data)
        ga[index] = g
        return (ga,)

    return from_op(data, (a,), backward_fn)


def temporal_conv(x, w) -> Tensor:
    """1-D convolution along the frame axis, per joint, mixing channels.

    ``x`` is (T, N, C_in); ``w`` is (K, C_in, C_out) with odd K. Frames are
    zero-padded so the output keeps T frames (same-size cross-correlation).
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"temporal_conv expects (T,N,C) and (K,C,C'), got {x.shape}, {w.shape}")
    T, N, c_in = x.shape
    K, wc_in, c_out = w.shape
    if wc_in != c_in:
        raise ShapeError(f"temporal_conv channel mismatch: input {c_in}, kernel {wc_in}")
    if K % 2 == 0:
        raise ShapeError(f"temporal kernel must be odd, got {K}")
    pad = K // 2
    xp = np.zeros((T + 2 * pad, N, c_in), dtype=x.dtype)
    xp[pad : pad + T] = x.data
    data = np.zeros((T, N, c_out), dtype=x.dtype)
    for k in range(K):
        data += np.matmul(xp[k : k + T], w.data[k])

    def backward_fn(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for k in range(K):
            gxp[k : k + T] += np.matmul(g, w.data[k].T)
            gw[k] = np.einsum("tni,tno->io", xp[k : k + T], g)
        return gxp[pad : pad + T], gw

    return from_op(data, (x, w), backward_fn)
