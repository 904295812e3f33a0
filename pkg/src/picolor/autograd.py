"""Dense tensors with define-by-run reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` when any input
requires a gradient; outside a tape everything runs as plain numpy. Records
are appended in execution order, so the tape is topologically sorted by
construction and one reverse sweep visits each record once.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from . import kernels

DEFAULT_DTYPE = np.float64

_active_tapes: list["Tape"] = []


class Tensor:
    """A numpy array plus, optionally, a place in the computation graph."""

    __array_priority__ = 100
    __slots__ = ("data", "requires_grad", "name", "node")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.node = None
        if requires_grad and _active_tapes:
            _active_tapes[-1].watch(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; tensors created with ``requires_grad=True``
    inside the block (or passed to :meth:`watch`) are the leaves whose
    gradients :meth:`backward` returns.
    """

    def __init__(self):
        self.records = []
        self.leaves = []
        self._leaf_ids = set()

    def __enter__(self):
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes.remove(self)
        return False

    def watch(self, *tensors):
        for t in tensors:
            t.requires_grad = True
            if id(t) not in self._leaf_ids:
                self._leaf_ids.add(id(t))
                self.leaves.append(t)
        return tensors[0] if len(tensors) == 1 else tensors

    def record(self, inputs, output, backward_fn):
        output.node = len(self.records)
        output.requires_grad = True
        self.records.append((inputs, output, backward_fn))

    def backward(self, loss):
        """Reverse sweep from a scalar ``loss``.

        Returns a dict mapping every watched leaf to its gradient (zeros when
        the leaf does not influence ``loss``). The tape is cleared afterwards.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        for inputs, output, backward_fn in reversed(self.records):
            g = grads.pop(id(output), None)
            if g is None:
                continue
            in_grads = backward_fn(g)
            for t, gi in zip(inputs, in_grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                prev = grads.get(id(t))
                grads[id(t)] = gi if prev is None else prev + gi
        out = {}
        for leaf in self.leaves:
            g = grads.get(id(leaf))
            out[leaf] = np.zeros_like(leaf.data) if g is None else g
        self.records = []
        return out


def backward(loss):
    """Backpropagate through the innermost active tape."""
    if not _active_tapes:
        raise RuntimeError("backward() called outside a Tape context")
    return _active_tapes[-1].backward(loss)


def _tracking(*inputs):
    if not _active_tapes:
        return None
    for t in inputs:
        if isinstance(t, Tensor) and t.requires_grad:
            return _active_tapes[-1]
    return None


def _wrap(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, inputs, backward_fn):
    out = Tensor(data)
    tape = _tracking(*inputs)
    if tape is not None:
        tape.record(inputs, out, backward_fn)
    return out


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _wrap(b, a)
    b = _wrap(b)
    return _wrap(a, b), b


def _broadcast_check(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"shapes {a.shape} and {b.shape} are not broadcastable") from None


# ---------------------------------------------------------------- arithmetic

def add(a, b):
    a, b = _pair(a, b)
    _broadcast_check(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b):
    a, b = _pair(a, b)
    _broadcast_check(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b):
    a, b = _pair(a, b)
    _broadcast_check(a, b)
    ad, bd = a.data, b.data
    return _make(
        ad * bd, (a, b),
        lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)),
    )


def div(a, b):
    a, b = _pair(a, b)
    _broadcast_check(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        out, (a, b),
        lambda g: (unbroadcast(g / bd, ad.shape), unbroadcast(-g * out / bd, bd.shape)),
    )


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def square(a):
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def sqrt(a):
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,))


# -------------------------------------------------------------- elementwise

def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def sigmoid(a):
    out = expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a):
    ad = a.data
    return _make(np.logaddexp(0.0, ad), (a,), lambda g: (g * expit(ad),))


def elu(a):
    # alpha = 1
    ad = a.data
    neg_part = np.expm1(np.minimum(ad, 0.0))
    out = np.where(ad > 0, ad, neg_part)
    return _make(out, (a,), lambda g: (g * np.where(ad > 0, 1.0, neg_part + 1.0),))


def clamp_min(a, floor):
    """``max(a, floor)``; the gradient is passed where ``a >= floor``."""
    ad = a.data
    mask = ad >= floor
    return _make(np.maximum(ad, floor), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------- reductions

def tsum(a, axis=None, keepdims=False):
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / count)


def log_sum_exp(a, axis=-1, keepdims=False):
    """Numerically stable ``log(sum(exp(a), axis))``."""
    ad = a.data
    if not -ad.ndim <= axis < ad.ndim:
        raise ValueError(f"axis {axis} out of range for shape {a.shape}")
    m = ad.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(ad - m)
    s = e.sum(axis=axis, keepdims=True)
    out_k = m + np.log(s)
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * e / s,)

    return _make(out, (a,), bw)


# ----------------------------------------------------------------- structure

def reshape(a, shape):
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a, index):
    shape, dtype = a.shape, a.dtype

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        full[index] = g
        return (full,)

    return _make(a.data[index], (a,), bw)


def concat(tensors, axis=1):
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def bw(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return tuple(parts)

    return _make(out, tuple(tensors), bw)


def split(a, sections, axis=1):
    """Split into equal sections along ``axis``."""
    n = a.shape[axis] // sections
    out = []
    for i in range(sections):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(i * n, (i + 1) * n)
        out.append(getitem(a, tuple(idx)))
    return out


def pad2d(a, pads):
    """Zero-pad the two trailing axes by ``(top, bottom, left, right)``."""
    top, bottom, left, right = pads
    if not any(pads):
        return a
    out = np.pad(a.data, ((0, 0),) * (a.ndim - 2) + ((top, bottom), (left, right)))
    h, w = a.shape[-2:]
    return _make(out, (a,), lambda g: (g[..., top:top + h, left:left + w],))


def shift_down(a):
    """Move every row down by one; the top row becomes zero."""
    h = a.shape[-2]
    out = np.zeros_like(a.data)
    out[..., 1:, :] = a.data[..., :h - 1, :]

    def bw(g):
        gi = np.zeros_like(g)
        gi[..., :h - 1, :] = g[..., 1:, :]
        return (gi,)

    return _make(out, (a,), bw)


def shift_right(a):
    """Move every column right by one; the leftmost column becomes zero."""
    w = a.shape[-1]
    out = np.zeros_like(a.data)
    out[..., :, 1:] = a.data[..., :, :w - 1]

    def bw(g):
        gi = np.zeros_like(g)
        gi[..., :, :w - 1] = g[..., :, 1:]
        return (gi,)

    return _make(out, (a,), bw)


# --------------------------------------------------------------- convolution

def resolve_padding(padding, in_h, in_w, kh, kw, stride, dilation):
    """Turn a pad-spec into explicit ``(top, bottom, left, right)``.

    ``"same"`` pads so that the output is ``ceil(in / stride)``, splitting any
    odd remainder towards the bottom/right.
    """
    if padding == "valid":
        return (0, 0, 0, 0)
    if padding == "same":
        def one(n, k):
            out = -(-n // stride)
            total = max((out - 1) * stride + dilation * (k - 1) + 1 - n, 0)
            return total // 2, total - total // 2
        return one(in_h, kh) + one(in_w, kw)
    if isinstance(padding, (tuple, list)) and len(padding) == 4 and all(int(p) >= 0 for p in padding):
        return tuple(int(p) for p in padding)
    raise ValueError(f"padding must be 'same', 'valid' or (top, bottom, left, right), got {padding!r}")


def conv_output_size(n, k, stride, dilation, pad_total):
    return (n + pad_total - dilation * (k - 1) - 1) // stride + 1


def conv2d(x, kernel, bias=None, stride=1, dilation=1, padding="same"):
    """2-D cross-correlation of an NCHW tensor with an (Co, C, kh, kw) kernel."""
    if stride < 1 or dilation < 1:
        raise ValueError(f"stride and dilation must be >= 1, got stride={stride}, dilation={dilation}")
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    co, ck, kh, kw = kernel.shape
    if c != ck:
        raise ValueError(
            f"channel mismatch: input {x.shape} has {c} channels, kernel {kernel.shape} expects {ck}"
        )
    if bias is not None and bias.shape != (co,):
        raise ValueError(f"bias shape {bias.shape} does not match {co} output channels")
    pads = resolve_padding(padding, h, w, kh, kw, stride, dilation)
    top, bottom, left, right = pads
    out_h = conv_output_size(h, kh, stride, dilation, top + bottom)
    out_w = conv_output_size(w, kw, stride, dilation, left + right)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"kernel {kernel.shape} with dilation {dilation} does not fit input {x.shape}")

    xd = x.data
    xp = np.pad(xd, ((0, 0), (0, 0), (top, bottom), (left, right))) if any(pads) else xd
    cols = kernels.im2col(xp, kh, kw, stride, dilation, out_h, out_w)
    cols2d = cols.reshape(n * out_h * out_w, c * kh * kw)
    k2d = kernel.data.reshape(co, -1)
    out2d = cols2d @ k2d.T
    if bias is not None:
        out2d += bias.data
    out = np.ascontiguousarray(out2d.reshape(n, out_h, out_w, co).transpose(0, 3, 1, 2))

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    padded_shape = xp.shape

    def bw(g):
        g2d = g.transpose(0, 2, 3, 1).reshape(-1, co)
        gk = (g2d.T @ cols2d).reshape(kernel.shape)
        gx = None
        if x.requires_grad:
            gcols = (g2d @ k2d).reshape(n, out_h, out_w, c, kh, kw)
            gxp = kernels.col2im(gcols, padded_shape, stride, dilation)
            gx = gxp[:, :, top:top + h, left:left + w]
        if bias is None:
            return gx, gk
        return gx, gk, g2d.sum(axis=0)

    return _make(out, inputs, bw)
