"""Minimal dense-tensor autodiff core.

Float64 throughout, reverse-mode differentiation over an implicit tape.
Covers exactly the layers the speaker net needs: matmul, 3x3 same-padding
conv, 2x2 maxpool, softmax, relu, batchnorm, plus elementwise/reshaping
plumbing with numpy-style broadcasting.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to `shape` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """Row-major float64 array plus optional gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # ---- graph -----------------------------------------------------------

    def backward(self):
        """Reverse-mode sweep seeded from this scalar."""
        if self.data.size != 1:
            raise ValueError(
                f"backward seed must be scalar, got shape {self.shape}"
            )
        topo = []
        seen = set()
        stack = [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad_path():
                    continue
                if parent.grad is None:
                    parent.grad = g.copy() if g.base is not None else g
                else:
                    parent.grad = parent.grad + g

    def requires_grad_path(self) -> bool:
        return self.requires_grad or bool(self._parents)

    # ---- operators ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, -_wrap(other))

    def __rsub__(self, other):
        return add(_wrap(other), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other)
        return mul(self, power(other, -1.0))

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return tslice(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        s = tsum(self, axis=axis, keepdims=keepdims)
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in _axes(axis, self.ndim)]
        )
        return scale(s, 1.0 / float(n))

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad_path() for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ---- elementwise / shape ops ---------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), bw)


def scale(a, s: float) -> Tensor:
    a = _wrap(a)
    s = float(s)

    def bw(g):
        return (g * s,)

    return _make(a.data * s, (a,), bw)


def power(a, p: float) -> Tensor:
    a = _wrap(a)
    p = float(p)
    out = a.data ** p

    def bw(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(out, (a,), bw)


def exp(a) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return _make(out, (a,), bw)


def log(a) -> Tensor:
    a = _wrap(a)

    def bw(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), bw)


def sqrt(a) -> Tensor:
    return power(a, 0.5)


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0.0

    def bw(g):
        return (g * mask,)

    return _make(a.data * mask, (a,), bw)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    old = a.shape

    def bw(g):
        return (g.reshape(old),)

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)

    def bw(g):
        return (g.transpose(inv),)

    return _make(a.data.transpose(axes), (a,), bw)


def tslice(a, idx) -> Tensor:
    a = _wrap(a)

    def bw(g):
        ga = np.zeros_like(a.data)
        ga[idx] = g
        return (ga,)

    return _make(a.data[idx], (a,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tensors, bw)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    axes = _axes(axis, a.ndim)

    def bw(g):
        if not keepdims:
            for ax in sorted(axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.shape),)

    return _make(a.data.sum(axis=axes, keepdims=keepdims), (a,), bw)


# ---- linear algebra -------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul dimension mismatch: {a.shape} @ {b.shape} "
            f"(inner {a.shape[1]} != {b.shape[0]})"
        )
    out = a.data @ b.data

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), bw)


def softmax(z, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis`."""
    z = _wrap(z)
    shifted = z.data - z.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (z,), bw)


# ---- conv / pool ----------------------------------------------------------


def conv2d_same(x, w, b=None) -> Tensor:
    """3x3 stride-1 convolution with padding 1 (spatial size preserved).

    x: (C,H,W) or (B,C,H,W); w: (O,C,3,3); optional bias (O,).
    """
    x, w = _wrap(x), _wrap(w)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ValueError(f"conv2d_same input must be CHW or BCHW, got {x.shape}")
    if w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ValueError(f"conv2d_same kernel must be (O,C,3,3), got {w.shape}")
    if xd.shape[1] != w.shape[1]:
        raise ValueError(
            f"conv2d_same channel mismatch: input has {xd.shape[1]} channels, "
            f"kernel expects {w.shape[1]}"
        )
    B, C, H, W = xd.shape
    O = w.shape[0]
    xp = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((B, O, H, W))
    for di in range(3):
        for dj in range(3):
            patch = xp[:, :, di:di + H, dj:dj + W]
            out += np.tensordot(patch, w.data[:, :, di, dj],
                                axes=([1], [1])).transpose(0, 3, 1, 2)
    parents = [x, w]
    if b is not None:
        b = _wrap(b)
        out += b.data[None, :, None, None]
        parents.append(b)

    def bw(g):
        g4 = g[None] if squeeze else g
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for di in range(3):
            for dj in range(3):
                gxp[:, :, di:di + H, dj:dj + W] += np.tensordot(
                    g4, w.data[:, :, di, dj], axes=([1], [0])
                ).transpose(0, 3, 1, 2)
                gw[:, :, di, dj] = np.tensordot(
                    g4, xp[:, :, di:di + H, dj:dj + W],
                    axes=([0, 2, 3], [0, 2, 3]))
        gx = gxp[:, :, 1:-1, 1:-1]
        if squeeze:
            gx = gx[0]
        grads = [gx, gw]
        if b is not None:
            grads.append(g4.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _make(out[0] if squeeze else out, parents, bw)


def maxpool2x2(x) -> Tensor:
    """2x2/2x2 max pooling; odd trailing rows/cols dropped, ties: first wins."""
    x = _wrap(x)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ValueError(f"maxpool2x2 input must be CHW or BCHW, got {x.shape}")
    B, C, H, W = xd.shape
    if H < 2 or W < 2:
        raise ValueError(f"maxpool2x2 needs spatial dims >= 2, got {H}x{W}")
    Ho, Wo = H // 2, W // 2
    win = xd[:, :, :2 * Ho, :2 * Wo].reshape(B, C, Ho, 2, Wo, 2)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        g4 = g[None] if squeeze else g
        gwin = np.zeros((B, C, Ho, Wo, 4))
        np.put_along_axis(gwin, arg[..., None], g4[..., None], axis=-1)
        gx = np.zeros_like(xd)
        gx[:, :, :2 * Ho, :2 * Wo] = (
            gwin.reshape(B, C, Ho, Wo, 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(B, C, 2 * Ho, 2 * Wo)
        )
        if squeeze:
            gx = gx[0]
        return (gx,)

    return _make(out[0] if squeeze else out, (x,), bw)


# ---- batchnorm ------------------------------------------------------------


@dataclass
class BatchNormState:
    """Running statistics for one batchnorm layer over feature dim F."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, num_features: int, momentum: float = 0.1,
               eps: float = 1e-5) -> "BatchNormState":
        return cls(np.zeros(num_features), np.ones(num_features),
                   momentum, eps)


def batchnorm(x, gamma, beta, state: BatchNormState, training: bool) -> Tensor:
    """Per-feature standardization over the batch axis, then affine.

    Training mode uses batch statistics (biased variance) and updates the
    running stats in place; eval mode uses running stats. x: (B, F).
    """
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    if x.ndim != 2:
        raise ValueError(f"batchnorm expects (B,F) input, got {x.shape}")
    B = x.shape[0]
    if training:
        if B < 2:
            raise ValueError("batchnorm training mode requires batch >= 2")
        mu = x.mean(axis=0, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=0, keepdims=True)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu.data[0]
        state.running_var = (1 - m) * state.running_var + m * var.data[0]
        xhat = centered * power(var + state.eps, -0.5)
    else:
        xhat = (x - state.running_mean) * Tensor(
            1.0 / np.sqrt(state.running_var + state.eps))
    return xhat * gamma + beta


# ---- verification harness --------------------------------------------------


def grad_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f maps a Tensor to a scalar Tensor; error per coordinate is
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    xt = Tensor(x.data.copy(), requires_grad=True)
    out = f(xt)
    out.backward()
    analytic = (xt.grad if xt.grad is not None
                else np.zeros_like(xt.data)).reshape(-1)
    flat = xt.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(xt).item()
        flat[i] = orig - eps
        lo = f(xt).item()
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * eps)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
