"""Dense tensor type with reverse-mode automatic differentiation.

Tensors wrap a row-major ndarray plus an optional graph edge (parents and an
adjoint closure).  backward() on a scalar walks the graph once, in reverse
topological order, accumulating gradients into .grad (an ndarray of the same
shape).  Two precisions are supported: float32 (training default) and
float64 (gradient checking); mix them and you get numpy's promotion, so keep
a graph homogeneous.

Set EVITCAPS_CHECK_FINITE=1 (or toggle tensor.CHECK_FINITE) to assert that
every primitive's output is finite — a debug aid, off by default.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from . import backend
from .errors import DimensionError, UsageError

_DEFAULT_DTYPE = np.float32
CHECK_FINITE = os.environ.get("EVITCAPS_CHECK_FINITE", "") not in ("", "0")
_GRAD_ENABLED = True


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    if np.dtype(dtype) not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise UsageError(f"default dtype must be float32 or float64, got {dtype}")
    _DEFAULT_DTYPE = np.dtype(dtype).type


def default_dtype():
    return _DEFAULT_DTYPE


@contextmanager
def precision(dtype):
    """Temporarily switch the default dtype (e.g. float64 for grad checks)."""
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / finite differences)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else _DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff ------------------------------------------------------------

    def backward(self) -> None:
        """Populate .grad on every tensor this scalar depends on.

        Repeated calls accumulate into existing leaf gradients; the training
        loop resets them between steps.
        """
        if self.size != 1:
            raise UsageError(f"backward requires a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        _accum(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype if dtype is not None else _DEFAULT_DTYPE),
                  requires_grad=requires_grad, dtype=dtype)


def ones(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype if dtype is not None else _DEFAULT_DTYPE),
                  requires_grad=requires_grad, dtype=dtype)


def _coerce(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, copy=True)
    else:
        t.grad += g


def _node(out_data: np.ndarray, parents: tuple[Tensor, ...],
          backward_fn: Callable[[np.ndarray], None] | None) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(out_data)):
        raise FloatingPointError("non-finite values produced by a primitive")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out._parents = parents if needs else ()
    out._backward_fn = backward_fn if needs else None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape`, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, ts) in enumerate(zip(g.shape, shape)) if ts == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a = _coerce(a, getattr(b, "dtype", _DEFAULT_DTYPE))
    b = _coerce(b, a.dtype)
    out_data = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _node(out_data, (a, b), bw)


def sub(a, b) -> Tensor:
    a = _coerce(a, getattr(b, "dtype", _DEFAULT_DTYPE))
    b = _coerce(b, a.dtype)
    out_data = a.data - b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _node(out_data, (a, b), bw)


def mul(a, b) -> Tensor:
    a = _coerce(a, getattr(b, "dtype", _DEFAULT_DTYPE))
    b = _coerce(b, a.dtype)
    out_data = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(out_data, (a, b), bw)


def div(a, b) -> Tensor:
    a = _coerce(a, getattr(b, "dtype", _DEFAULT_DTYPE))
    b = _coerce(b, a.dtype)
    out_data = a.data / b.data

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(out_data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, -g)

    return _node(-a.data, (a,), bw)


def texp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bw(g):
        _accum(a, g * out_data)

    return _node(out_data, (a,), bw)


def tlog(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, g / a.data)

    return _node(np.log(a.data), (a,), bw)


def tsqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def bw(g):
        _accum(a, g * (0.5 / out_data))

    return _node(out_data, (a,), bw)


def ttanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _node(out_data, (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        _accum(a, g * mask)

    return _node(np.where(mask, a.data, a.data.dtype.type(0)), (a,), bw)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    x = a.data
    u = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(u)
    out_data = 0.5 * x * (1.0 + t)

    def bw(g):
        sech2 = 1.0 - t * t
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        _accum(a, g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * du))

    return _node(out_data.astype(x.dtype, copy=False), (a,), bw)


# -- reductions and shape ops -------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _node(np.asarray(out_data), (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else (
        np.prod([a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    in_shape = a.shape

    def bw(g):
        _accum(a, g.reshape(in_shape))

    return _node(a.data.reshape(shape), (a,), bw)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        _accum(a, g.transpose(inv))

    return _node(np.ascontiguousarray(a.data.transpose(axes)), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return _node(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), bw)


def slice_nd(a: Tensor, slices) -> Tensor:
    """Basic (possibly strided) slicing; backward scatters into zeros."""
    slices = tuple(slices)
    in_shape = a.shape

    def bw(g):
        gx = np.zeros(in_shape, dtype=g.dtype)
        gx[slices] = g
        _accum(a, gx)

    return _node(np.ascontiguousarray(a.data[slices]), (a,), bw)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    return slice_nd(a, sl)


def pad_spatial(a: Tensor, pad: int, axes: Sequence[int]) -> Tensor:
    """Zero-pad `pad` on both sides of each axis in `axes`."""
    widths = [(0, 0)] * a.ndim
    for ax in axes:
        widths[ax] = (pad, pad)
    crop = tuple(slice(p, p + s) for (p, _), s in zip(widths, a.shape))

    def bw(g):
        _accum(a, np.ascontiguousarray(g[crop]))

    return _node(np.pad(a.data, widths), (a,), bw)


def gather(table: Tensor, idx: np.ndarray) -> Tensor:
    """Index a 1-D table with an integer array; scatter-adds on backward."""
    idx = np.asarray(idx)

    def bw(g):
        gt = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(gt, idx, g)
        _accum(table, gt)

    return _node(table.data[idx], (table,), bw)


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = _coerce(a, getattr(b, "dtype", _DEFAULT_DTYPE))
    b = _coerce(b, a.dtype)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, b.data.swapaxes(-1, -2))
        gb = np.matmul(a.data.swapaxes(-1, -2), g)
        _accum(a, _unbroadcast(ga, a.shape))
        _accum(b, _unbroadcast(gb, b.shape))

    return _node(out_data, (a, b), bw)


def softmax(a: Tensor, axis: int) -> Tensor:
    x = a.data
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(a, out_data * (g - dot))

    return _node(out_data, (a,), bw)


def log_softmax(a: Tensor, axis: int) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    sm = np.exp(out_data)

    def bw(g):
        _accum(a, g - sm * g.sum(axis=axis, keepdims=True))

    return _node(out_data, (a,), bw)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, axis: int = -1,
              eps: float = 1e-5) -> Tensor:
    """Normalize over one axis; gamma/beta broadcast against x."""
    xd = x.data
    mu = xd.mean(axis=axis, keepdims=True)
    var = xd.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out_data = gamma.data * xhat + beta.data

    def bw(g):
        gl = g * gamma.data
        m1 = gl.mean(axis=axis, keepdims=True)
        m2 = (gl * xhat).mean(axis=axis, keepdims=True)
        _accum(x, (gl - m1 - xhat * m2) * inv)
        _accum(gamma, _unbroadcast(g * xhat, gamma.shape))
        _accum(beta, _unbroadcast(g, beta.shape))

    return _node(out_data.astype(xd.dtype, copy=False), (x, gamma, beta), bw)


# -- convolutions -------------------------------------------------------------

def _conv_out_size(s: int, k: int, stride: int, dilation: int, padding: int) -> int:
    return (s + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv3d(x: Tensor, w: Tensor, stride: int = 1, dilation: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """Cross-correlate x (C_in, D, H, W) with w (C_out, C_in/groups, k, k, k).

    Bias is not fused; add it separately.
    """
    if x.ndim != 4 or w.ndim != 5:
        raise DimensionError(f"conv3d expects x rank 4 and w rank 5, got {x.shape}, {w.shape}")
    c_in = x.shape[0]
    if c_in % groups != 0 or w.shape[0] % groups != 0:
        raise DimensionError(f"channels {c_in}/{w.shape[0]} not divisible by groups={groups}")
    if w.shape[1] != c_in // groups:
        raise DimensionError(
            f"weight expects {w.shape[1]} input channels per group, input has {c_in // groups}")
    k = w.shape[2]
    out_sp = [_conv_out_size(s, k, stride, dilation, padding) for s in x.shape[1:]]
    if min(out_sp) < 1:
        from .errors import ConfigurationError
        raise ConfigurationError(
            f"conv3d produces empty output for input {x.shape}, k={k}, stride={stride}, "
            f"dilation={dilation}, padding={padding}")
    out_data = backend.conv3d_forward(x.data, w.data, stride, dilation, padding, groups)
    in_shape = x.shape

    def bw(g):
        _accum(x, backend.conv3d_grad_input(g, w.data, stride, dilation, padding,
                                            groups, in_shape))
        _accum(w, backend.conv3d_grad_weight(x.data, g, stride, dilation, padding,
                                             groups, k))

    return _node(out_data, (x, w), bw)


def conv3d_transpose(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Adjoint of conv3d: maps (C_out, D, H, W) back to (C_in, (D-1)*stride+k, ...).

    w uses conv3d layout (C_out, C_in, k, k, k); no padding or dilation.
    """
    if x.ndim != 4 or w.ndim != 5:
        raise DimensionError(f"conv3d_transpose expects x rank 4, w rank 5, got {x.shape}, {w.shape}")
    if x.shape[0] != w.shape[0]:
        raise DimensionError(
            f"conv3d_transpose channel mismatch: x has {x.shape[0]}, w expects {w.shape[0]}")
    k = w.shape[2]
    out_shape = (w.shape[1],) + tuple((s - 1) * stride + k for s in x.shape[1:])
    out_data = backend.conv3d_grad_input(x.data, w.data, stride, 1, 0, 1, out_shape)

    def bw(g):
        _accum(x, backend.conv3d_forward(g, w.data, stride, 1, 0, 1))
        _accum(w, backend.conv3d_grad_weight(g, x.data, stride, 1, 0, 1, k))

    return _node(out_data, (x, w), bw)


# -- gradient checking --------------------------------------------------------

def grad_check(f: Callable[..., Tensor], inputs: Iterable[Tensor],
               eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    f is called as f(*inputs) and must return a scalar Tensor; run this in
    float64, float32 finite differences are too noisy to be meaningful.
    """
    inputs = list(inputs)
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    loss = f(*inputs)
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]

    worst = 0.0
    with no_grad():
        for t, an in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                h = eps * max(1.0, abs(orig))
                flat[i] = orig + h
                up = float(f(*inputs).data)
                flat[i] = orig - h
                down = float(f(*inputs).data)
                flat[i] = orig
                cd = (up - down) / (2.0 * h)
                ad = float(an.reshape(-1)[i])
                rel = abs(ad - cd) / max(abs(ad), abs(cd), 1e-8)
                if rel > worst:
                    worst = rel
    return worst
