"""Dense float64 tensors with reverse-mode automatic differentiation.

Arrays are numpy-backed and row-major. Every differentiable operation
records a backward closure on the output tensor; ``Tensor.backward()``
walks the graph once in reverse topological order and accumulates
gradients additively across fan-out. Graphs are acyclic by construction
(ops always create fresh output nodes).

Broadcasting is deliberately restricted: two operands may differ only by
leading batch dimensions (the smaller shape must be a suffix of the
larger), plus plain scalars. Everything else raises ``ShapeError``.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf as _erf


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


_GRAD_ENABLED = [True]


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def grad_enabled():
    return _GRAD_ENABLED[-1]


def _as_array(data):
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array plus optional gradient buffer and graph linkage.

    ``data`` is immutable by convention once the tensor participates in a
    graph; only ``grad`` is written during the backward pass. ``_parents``
    and ``_backward`` exist only on op outputs while grad mode is on.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- constructors -------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad=False):
        return Tensor(np.zeros(shape, dtype=np.float64), requires_grad)

    @staticmethod
    def ones(shape, requires_grad=False):
        return Tensor(np.ones(shape, dtype=np.float64), requires_grad)

    @staticmethod
    def const(data):
        return Tensor(data, requires_grad=False)

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph ----------------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=None):
        """Reverse-mode pass from this tensor.

        ``seed`` defaults to 1.0 and requires a scalar output. The graph
        is walked in reverse topological order; each node is visited
        exactly once and fan-out gradients accumulate by addition. The
        ordering is a deterministic function of graph construction order.
        """
        if seed is None:
            if self.data.size != 1:
                raise ShapeError(
                    f"backward() without seed needs a scalar, got shape {self.shape}"
                )
            seed = np.ones_like(self.data)
        else:
            seed = _as_array(seed)
            if seed.shape != self.data.shape:
                raise ShapeError(
                    f"seed shape {seed.shape} does not match tensor shape {self.shape}"
                )

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            # reversed so parents are expanded left-to-right deterministically
            for p in reversed(node._parents):
                if id(p) not in visited:
                    stack.append((p, False))

        self.grad = seed if self.grad is None else self.grad + seed
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy() if g.base is not None or g.flags.writeable is False else g
        else:
            self.grad = self.grad + g

    # -- operators -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / other)
        return mul(self, reciprocal(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    # method sugar
    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor.const(x)


def _make(data, parents, backward_fn):
    """Create an op output; records graph only when grad applies."""
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_suffix_broadcast(a_shape, b_shape, op):
    """Allow only leading-dimension broadcast: one shape is a suffix of the other."""
    small, big = (a_shape, b_shape) if len(a_shape) <= len(b_shape) else (b_shape, a_shape)
    if small != () and big[len(big) - len(small):] != small:
        raise ShapeError(f"{op}: shapes {a_shape} and {b_shape} are not leading-batch compatible")


def _unbroadcast(g, shape):
    """Sum gradient over leading dims added by broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


# -- elementwise ----------------------------------------------------------


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_suffix_broadcast(a.shape, b.shape, "add")
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_suffix_broadcast(a.shape, b.shape, "mul")
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def reciprocal(a):
    a = _wrap(a)
    out_data = 1.0 / a.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(-g * out_data * out_data)

    return _make(out_data, (a,), backward)


def exp(a):
    a = _wrap(a)
    out_data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return _make(out_data, (a,), backward)


def log(a):
    a = _wrap(a)
    out_data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(out_data, (a,), backward)


def abs_(a):
    """|x| with subgradient 0 at exactly 0."""
    a = _wrap(a)
    out_data = np.abs(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * np.sign(a.data))

    return _make(out_data, (a,), backward)


def sigmoid(a):
    a = _wrap(a)
    out_data = np.empty_like(a.data)
    pos = a.data >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out_data[~pos] = ez / (1.0 + ez)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a):
    """Exact (erf-based) GELU: x * Phi(x)."""
    a = _wrap(a)
    phi = 0.5 * (1.0 + _erf(a.data * _INV_SQRT2))
    out_data = a.data * phi

    def backward(g):
        if a.requires_grad:
            pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
            a._accumulate(g * (phi + a.data * pdf))

    return _make(out_data, (a,), backward)


def dropout(a, p, rng):
    """Inverted dropout; identity (no graph node) when p == 0."""
    if p <= 0.0:
        return a
    a = _wrap(a)
    keep = (rng.random(a.shape) >= p).astype(np.float64) / (1.0 - p)
    out_data = a.data * keep

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * keep)

    return _make(out_data, (a,), backward)


# -- shape ops -------------------------------------------------------------


def reshape(a, shape):
    a = _wrap(a)
    old_shape = a.shape
    out_data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(old_shape))

    return _make(out_data, (a,), backward)


def transpose(a, axes):
    a = _wrap(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out_data = np.ascontiguousarray(a.data.transpose(axes))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inv))

    return _make(out_data, (a,), backward)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    nd = tensors[0].ndim
    for t in tensors[1:]:
        if t.ndim != nd:
            raise ShapeError(
                f"concat: rank mismatch {tensors[0].shape} vs {t.shape}"
            )
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(out_data, tuple(tensors), backward)


def getitem(a, key):
    a = _wrap(a)
    out_data = a.data[key]
    in_shape = a.shape

    def backward(g):
        if a.requires_grad:
            full = np.zeros(in_shape, dtype=np.float64)
            np.add.at(full, key, g)
            a._accumulate(full)

    return _make(out_data, (a,), backward)


def sum_(a, axis=None, keepdims=False):
    a = _wrap(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)
    in_shape = a.shape

    def backward(g):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(g, in_shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(gg, in_shape).copy())

    return _make(out_data, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = _wrap(a)
    if axis is None:
        n = a.size
    else:
        n = a.shape[axis]
    return mul(sum_(a, axis, keepdims), 1.0 / n)


# -- linear algebra ---------------------------------------------------------


def matmul(a, b):
    """Batched matrix product over trailing two dims.

    Batch dimensions follow the suffix-broadcast rule: the operand with
    fewer dims is reused across the other's leading batch dims.
    """
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=2-dim, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    _check_suffix_broadcast(a.shape[:-2], b.shape[:-2], "matmul")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), backward)


def embedding_lookup(table, indices):
    """Row gather from a (V, D) table; indices may be any integer array."""
    table = _wrap(table)
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(
            f"embedding_lookup: index out of range for table of {table.shape[0]} rows"
        )
    out_data = table.data[idx]

    def backward(g):
        if table.requires_grad:
            full = np.zeros(table.shape, dtype=np.float64)
            np.add.at(full, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
            table._accumulate(full)

    return _make(out_data, (table,), backward)


def layernorm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then affine: gain * x_hat + bias."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(
            f"layernorm: affine shapes {gain.shape}/{bias.shape} vs feature dim {x.shape[-1]}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = gain.data * xhat + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, x.shape[-1]).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, x.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gx_hat = g * gain.data
            m1 = gx_hat.mean(axis=-1, keepdims=True)
            m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (gx_hat - m1 - xhat * m2))

    return _make(out_data, (x, gain, bias), backward)


def softmax(x, axis=-1):
    """Max-stabilized softmax along ``axis``."""
    x = _wrap(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            x._accumulate(out_data * (g - dot))

    return _make(out_data, (x,), backward)


def cross_entropy(logits, targets, weights=None):
    """Weighted token cross-entropy.

    ``logits`` is (S, M), ``targets`` an integer sequence in [0, M), and
    ``weights`` nonnegative per-row weights (defaults to ones). Returns
    sum_s w_s * (-log softmax(logits_s)[t_s]) / sum_s w_s as a scalar.
    """
    logits = _wrap(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-dim, got {logits.shape}")
    t = np.asarray(targets, dtype=np.int64)
    s, m = logits.shape
    if t.shape != (s,):
        raise ShapeError(f"cross_entropy: {t.shape[0] if t.ndim else 0} targets for {s} rows")
    if t.size and (t.min() < 0 or t.max() >= m):
        raise IndexError(f"cross_entropy: target outside [0, {m})")
    weights = Tensor.ones((s,)) if weights is None else _wrap(weights)
    if np.any(weights.data < 0):
        raise ValueError("cross_entropy: weights must be nonnegative")

    mx = logits.data.max(axis=1, keepdims=True)
    e = np.exp(logits.data - mx)
    z = e.sum(axis=1, keepdims=True)
    log_p = logits.data - mx - np.log(z)
    nll = -log_p[np.arange(s), t]
    wsum = weights.data.sum()
    out_data = np.asarray((weights.data * nll).sum() / wsum)

    def backward(g):
        gs = float(g)
        if logits.requires_grad:
            p = e / z
            p[np.arange(s), t] -= 1.0
            logits._accumulate(gs * p * (weights.data / wsum)[:, None])
        if weights.requires_grad:
            weights._accumulate(gs * (nll - float(out_data)) / wsum)

    return _make(out_data, (logits, weights), backward)


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy on raw logits, numerically stable."""
    logits = _wrap(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: target shape {y.shape} vs {logits.shape}")
    z = logits.data
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out_data = np.asarray(per.mean())
    n = z.size

    def backward(g):
        if logits.requires_grad:
            p = np.empty_like(z)
            pos = z >= 0
            p[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
            ez = np.exp(z[~pos])
            p[~pos] = ez / (1.0 + ez)
            logits._accumulate(float(g) * (p - y) / n)

    return _make(out_data, (logits,), backward)


# -- convolutions ------------------------------------------------------------


def _conv_windows(xp, kh, kw, stride):
    """(B, C, Hp, Wp) -> (B, H_out, W_out, C, kh, kw) strided view."""
    sw = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    sw = sw[:, :, ::stride, ::stride]  # (B, C, H_out, W_out, kh, kw)
    return sw.transpose(0, 2, 3, 1, 4, 5)


def _conv_out_size(h, kh, stride, pad):
    return (h + 2 * pad - kh) // stride + 1


def _scatter_cols(gcols, in_shape, kh, kw, stride, pad):
    """Adjoint of _conv_windows: scatter-add (B, Ho, Wo, C, kh, kw) into (B, C, H, W)."""
    b, c, h, w = in_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    ho, wo = gcols.shape[1], gcols.shape[2]
    gx = np.zeros((b, c, hp, wp), dtype=np.float64)
    g = gcols.transpose(0, 3, 1, 2, 4, 5)  # (B, C, Ho, Wo, kh, kw)
    for ki in range(kh):
        for kj in range(kw):
            gx[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += g[:, :, :, :, ki, kj]
    if pad:
        gx = gx[:, :, pad:hp - pad, pad:wp - pad]
    return gx


def conv2d(x, w, b, stride=1, pad=0):
    """2D convolution, x (B,C,H,W) with filters w (F,C,kh,kw) and bias b (F,)."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: need 4-dim input/filters, got {x.shape}, {w.shape}")
    bs, c, h, wdt = x.shape
    f, cw, kh, kw = w.shape
    if c != cw:
        raise ShapeError(f"conv2d: channel mismatch {x.shape} vs {w.shape}")
    if b.shape != (f,):
        raise ShapeError(f"conv2d: bias shape {b.shape} vs {f} filters")
    ho, wo = _conv_out_size(h, kh, stride, pad), _conv_out_size(wdt, kw, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = np.ascontiguousarray(_conv_windows(xp, kh, kw, stride))  # (B,Ho,Wo,C,kh,kw)
    flat = cols.reshape(bs * ho * wo, c * kh * kw)
    wf = w.data.reshape(f, c * kh * kw)
    out = (flat @ wf.T).reshape(bs, ho, wo, f).transpose(0, 3, 1, 2) + b.data[None, :, None, None]

    def backward(g):
        gf = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(bs * ho * wo, f)
        if w.requires_grad:
            w._accumulate((gf.T @ flat).reshape(f, c, kh, kw))
        if b.requires_grad:
            b._accumulate(gf.sum(axis=0))
        if x.requires_grad:
            gcols = (gf @ wf).reshape(bs, ho, wo, c, kh, kw)
            x._accumulate(_scatter_cols(gcols, x.shape, kh, kw, stride, pad))

    return _make(out, (x, w, b), backward)


def conv2d_stride2(x, w, b, pad=1):
    """Stride-2 convolution (the downsampling block)."""
    return conv2d(x, w, b, stride=2, pad=pad)


def conv_transpose2d(x, w, b, stride=2, pad=1):
    """Transposed convolution, x (B,F,h,w), w (F,C,kh,kw) -> (B,C,H,W).

    Exact adjoint of ``conv2d`` with the same (stride, pad): output size
    is (h-1)*stride - 2*pad + kh.
    """
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    bs, f, h, wdt = x.shape
    fw, c, kh, kw = w.shape
    if f != fw:
        raise ShapeError(f"conv_transpose2d: channel mismatch {x.shape} vs {w.shape}")
    if b.shape != (c,):
        raise ShapeError(f"conv_transpose2d: bias shape {b.shape} vs {c} channels")
    ho = (h - 1) * stride - 2 * pad + kh
    wo = (wdt - 1) * stride - 2 * pad + kw
    # forward = scatter of per-position outer products (adjoint of conv2d input-grad)
    xf = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(bs * h * wdt, f)
    wf = w.data.reshape(f, c * kh * kw)
    cols = (xf @ wf).reshape(bs, h, wdt, c, kh, kw)
    out = _scatter_cols(cols, (bs, c, ho, wo), kh, kw, stride, pad) + b.data[None, :, None, None]

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g
        gcols = np.ascontiguousarray(_conv_windows(gp, kh, kw, stride))  # (B,h,w,C,kh,kw)
        gflat = gcols.reshape(bs * h * wdt, c * kh * kw)
        if x.requires_grad:
            x._accumulate((gflat @ wf.T).reshape(bs, h, wdt, f).transpose(0, 3, 1, 2))
        if w.requires_grad:
            w._accumulate((xf.T @ gflat).reshape(f, c, kh, kw))
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))

    return _make(out, (x, w, b), backward)
