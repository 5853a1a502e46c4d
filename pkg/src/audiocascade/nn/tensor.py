"""Dense tensors with reverse-mode automatic differentiation.

A deliberately small engine: numpy arrays for storage, a closure-based
tape for gradients. Only the operations the 1D U-Net needs are provided;
broadcasting is supported for elementwise ops (gradients are summed back
over broadcast axes).

Convention: t=0 graph leaves are created with ``requires_grad=True`` for
parameters and ``False`` for data. Under ``no_grad()`` no graph is built,
so inference costs no tape memory.
"""

from __future__ import annotations

import contextlib
import math
from typing import Iterable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True
_NAN_CHECKS = False


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(bits: int):
    """Temporarily switch the default float width (32 or 64)."""
    global _DEFAULT_DTYPE
    if bits not in (32, 64):
        raise ValueError(f"precision must be 32 or 64, got {bits}")
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.float32 if bits == 32 else np.float64
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


@contextlib.contextmanager
def no_grad():
    """Disable graph recording; forward passes become plain numpy work."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_nan_checks(enabled: bool):
    """When on, every op asserts its output is finite (debug hook)."""
    global _NAN_CHECKS
    _NAN_CHECKS = bool(enabled)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` over axes that were broadcast from `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        if _NAN_CHECKS and not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite values in tensor")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    # -- bookkeeping ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if _NAN_CHECKS and node.grad is not None and not np.all(np.isfinite(node.grad)):
                raise FloatingPointError("non-finite gradient")

    # -- operators -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward):
    """Create an op output; prunes the tape when grads are off/unneeded."""
    track = _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents)
    if not track:
        return Tensor(data)
    t = Tensor(data, _parents=tuple(parents), _backward=None)
    t._backward = backward
    return t


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def backward(g):
        a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        b._accumulate(_unbroadcast(-g * out_data / b.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out_data)

    return _make(out_data, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g * 0.5 / out_data)

    return _make(out_data, (a,), backward)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g * p * a.data ** (p - 1))

    return _make(a.data ** p, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # stable: never exponentiates a large positive argument
    out_data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                        np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def backward(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                 np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    out_data = a.data * s

    def backward(g):
        a._accumulate(g * s * (1.0 + a.data * (1.0 - s)))

    return _make(out_data, (a,), backward)


# -- shape ops ---------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape

    def backward(g):
        a._accumulate(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        a._accumulate(g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), backward)


def getitem(a, key) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        a._accumulate(full)

    return _make(a.data[key], (a,), backward)


def concat(tensors: Iterable[Tensor], axis: int) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in ts]
    out_data = np.concatenate([t.data for t in ts], axis=axis)

    def backward(g):
        offset = 0
        for t, n in zip(ts, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + n)
            t._accumulate(g[tuple(idx)])
            offset += n

    return _make(out_data, tuple(ts), backward)


def pad_axis(a, axis: int, before: int, after: int) -> Tensor:
    """Zero-pad along one axis."""
    a = as_tensor(a)
    widths = [(0, 0)] * a.data.ndim
    widths[axis] = (before, after)
    n = a.data.shape[axis]

    def backward(g):
        idx = [slice(None)] * g.ndim
        idx[axis] = slice(before, before + n)
        a._accumulate(g[tuple(idx)])

    return _make(np.pad(a.data, widths), (a,), backward)


def repeat_axis(a, n: int, axis: int) -> Tensor:
    """Nearest-neighbour upsample: each entry repeated n times along axis."""
    a = as_tensor(a)

    def backward(g):
        shape = list(a.data.shape)
        shape.insert(axis + 1, n)
        a._accumulate(g.reshape(shape).sum(axis=axis + 1))

    return _make(np.repeat(a.data, n, axis=axis), (a,), backward)


# -- reductions ---------------------------------------------------------------

def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _make(out_data, (a,), backward)


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[i] for i in axes]))
    return mul(reduce_sum(a, axis, keepdims), 1.0 / count)


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product; stacked (leading) dims must match exactly."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim > 2 and b.ndim > 2 and a.data.shape[:-2] != b.data.shape[:-2]:
        raise ValueError(f"matmul batch dims differ: {a.data.shape} vs {b.data.shape}")
    out_data = a.data @ b.data

    def backward(g):
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        a._accumulate(_unbroadcast(ga, a.data.shape))
        b._accumulate(_unbroadcast(gb, b.data.shape))

    return _make(out_data, (a, b), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        a._accumulate(out_data * (g - inner))

    return _make(out_data, (a,), backward)


# -- convolution ---------------------------------------------------------------

def _same_pad(length: int, k: int, stride: int) -> tuple[int, int, int]:
    out_len = -(-length // stride)
    total = max(0, (out_len - 1) * stride + k - length)
    left = total // 2
    return out_len, left, total - left


def conv1d(x, w, b=None, stride: int = 1, padding: str = "same") -> Tensor:
    """1D cross-correlation.

    x: [batch, length, ch_in]; w: [k, ch_in, ch_out]; b: [ch_out] or None.
    'same' padding gives out_length = ceil(length / stride).
    """
    x, w = as_tensor(x), as_tensor(w)
    if b is not None:
        b = as_tensor(b)
    batch, length, ch_in = x.data.shape
    k, kin, ch_out = w.data.shape
    if kin != ch_in:
        raise ValueError(f"conv1d channel mismatch: input {ch_in}, kernel {kin}")
    if k < 1 or stride < 1:
        raise ValueError("conv1d requires k >= 1 and stride >= 1")

    if padding == "same":
        out_len, lpad, rpad = _same_pad(length, k, stride)
    elif padding == "valid":
        if length < k:
            raise ValueError("input shorter than kernel with valid padding")
        out_len, lpad, rpad = (length - k) // stride + 1, 0, 0
    else:
        raise ValueError(f"unknown padding {padding!r}")

    xp = np.pad(x.data, ((0, 0), (lpad, rpad), (0, 0))) if (lpad or rpad) else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)  # [B, L', Cin, k]
    win = win[:, ::stride][:, :out_len]
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(batch * out_len, k * ch_in)
    wflat = w.data.reshape(k * ch_in, ch_out)
    out_data = (cols @ wflat).reshape(batch, out_len, ch_out)
    if b is not None:
        out_data = out_data + b.data

    def backward(g):
        gflat = g.reshape(batch * out_len, ch_out)
        w._accumulate((cols.T @ gflat).reshape(k, ch_in, ch_out))
        if b is not None:
            b._accumulate(gflat.sum(axis=0))
        gcols = (gflat @ wflat.T).reshape(batch, out_len, k, ch_in)
        gxp = np.zeros((batch, length + lpad + rpad, ch_in), dtype=g.dtype)
        pos = stride * np.arange(out_len)
        for tap in range(k):
            gxp[:, tap + pos, :] += gcols[:, :, tap, :]
        x._accumulate(gxp[:, lpad:lpad + length, :])

    parents = (x, w) if b is None else (x, w, b)
    return _make(out_data, parents, backward)
