"""Differentiable operations over :class:`~crossdtr.tensor.core.Tensor`.

Primitives carry explicit backward closures; composites (linear, layer_norm,
multi_head_attention) are built from primitives so their gradients come for
free. Convolution uses patch-matrix expansion (sliding windows + einsum) —
exact, not fast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from ..errors import ConfigurationError, ShapeError
from .core import Tensor, record

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _wrap(x, like: Tensor) -> Tensor:
    """Coerce a python scalar / ndarray into a constant tensor of matching dtype."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    out = Tensor(a.data + b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record(out, (a, b), bwd)


def mul(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    out = Tensor(a.data * b.data)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return record(out, (a,), lambda g: (-g,))


def sub(a: Tensor, b) -> Tensor:
    return add(a, neg(_wrap(b, a)))


def div(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)
    out = Tensor(a.data / b.data)

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return record(out, (a, b), bwd)


def powc(a: Tensor, p: float) -> Tensor:
    """Raise to a constant power (used for rsqrt in layer_norm)."""
    out = Tensor(a.data**p)

    def bwd(g):
        return (g * p * a.data ** (p - 1.0),)

    return record(out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))
    y = out.data
    return record(out, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return record(out, (a,), lambda g: (g / a.data,))


def sigmoid(a: Tensor) -> Tensor:
    out = Tensor(expit(a.data).astype(a.data.dtype, copy=False))
    y = out.data
    return record(out, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    mask = a.data > 0
    return record(out, (a,), lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    x = a.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = Tensor((x * phi).astype(x.dtype, copy=False))

    def bwd(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (phi + x * pdf),)

    return record(out, (a,), bwd)


def absolute(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data))
    sign = np.sign(a.data)
    return record(out, (a,), lambda g: (g * sign,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); gradient passes only where a was not clamped."""
    out = Tensor(np.maximum(a.data, floor))
    mask = a.data >= floor
    return record(out, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions and structure


def _expand_reduced(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        return (_expand_reduced(g, a.shape, axis, keepdims).copy(),)

    return record(out, (a,), bwd)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    count = a.size if axis is None else a.size // out.size

    def bwd(g):
        return (_expand_reduced(g, a.shape, axis, keepdims) / count,)

    return record(out, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return record(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    out = Tensor(a.data.transpose(axes))
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)
    return record(out, (a,), lambda g: (g.transpose(inv),))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return record(out, tuple(parts), bwd)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = Tensor(a.data[index])

    def bwd(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    try:
        out = Tensor(np.matmul(a.data, b.data))
    except ValueError as e:  # non-broadcastable batch dims
        raise ShapeError(f"matmul batch dimensions disagree: {a.shape} x {b.shape}") from e

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record(out, (a, b), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return record(out, (a,), bwd)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x[B,C,H,W] with kernel[O,C,kh,kw]."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    B, C, H, W = x.shape
    O, Ck, kh, kw = kernel.shape
    if Ck != C:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel sides must be odd, got {kh}x{kw}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be >= 1, got {stride}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise ShapeError(
            f"conv2d kernel {kh}x{kw} larger than padded input {Hp}x{Wp} "
            f"(input {x.shape}, padding {padding})"
        )
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = Tensor(np.einsum("bchwuv,ocuv->bohw", win, kernel.data, optimize=True))

    def bwd(g):
        gk = np.einsum("bohw,bchwuv->ocuv", g, win, optimize=True)
        gxp = np.zeros_like(xp)
        gcol = np.einsum("bohw,ocuv->bchwuv", g, kernel.data, optimize=True)
        for u in range(kh):
            for v in range(kw):
                gxp[:, :, u : u + stride * Ho : stride, v : v + stride * Wo : stride] += gcol[
                    :, :, :, :, u, v
                ]
        gx = gxp[:, :, padding : padding + H, padding : padding + W] if padding else gxp
        return gx, gk

    return record(out, (x, kernel), bwd)


# ---------------------------------------------------------------------------
# composites


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x[.., in] @ w[in, out] (+ b[out]), recorded as one fused node."""
    if x.ndim < 2 or w.ndim != 2:
        raise ShapeError(f"linear needs x rank >= 2 and a weight matrix, got {x.shape}, {w.shape}")
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear dimensions disagree: {x.shape} x {w.shape}")
    data = np.matmul(x.data, w.data)
    if b is not None:
        data = data + b.data
    out = Tensor(data)

    def bwd(g):
        gx = np.matmul(g, w.data.T)
        flat_g = g.reshape(-1, g.shape[-1])
        gw = np.matmul(x.data.reshape(-1, x.shape[-1]).T, flat_g)
        if b is None:
            return gx, gw
        return gx, gw, _unbroadcast(g, b.shape)

    inputs = (x, w) if b is None else (x, w, b)
    return record(out, inputs, bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(xhat * gain.data + bias.data)
    n = x.shape[-1]

    def bwd(g):
        gg = g * gain.data
        inner = (gg * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gg - gg.mean(axis=-1, keepdims=True) - xhat * inner)
        reduce_axes = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=reduce_axes)
        dbias = g.sum(axis=reduce_axes)
        return gx, _unbroadcast(dgain, gain.shape), _unbroadcast(dbias, bias.shape)

    return record(out, (x, gain, bias), bwd)


@dataclass
class AttentionProjections:
    """Input/output projection weights of one multi-head attention block."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Optional[Tensor] = None
    bk: Optional[Tensor] = None
    bv: Optional[Tensor] = None
    bo: Optional[Tensor] = None

    def tensors(self) -> list[Tensor]:
        return [t for t in (self.wq, self.wk, self.wv, self.wo, self.bq, self.bk, self.bv, self.bo) if t is not None]


def multi_head_attention(
    q: Tensor, k: Tensor, v: Tensor, heads: int, proj: AttentionProjections
) -> Tensor:
    """Scaled dot-product attention over [L, C] sequences, heads concatenated.

    Scale is 1/sqrt(C/heads); the head outputs are concatenated and passed
    through the output projection.
    """
    C = q.shape[-1]
    if C % heads != 0:
        raise ConfigurationError(f"embedding width {C} is not divisible by {heads} heads")
    dk = C // heads

    def split_heads(t: Tensor) -> Tensor:
        L = t.shape[0]
        return transpose(reshape(t, (L, heads, dk)), (1, 0, 2))  # [H, L, dk]

    qh = split_heads(linear(q, proj.wq, proj.bq))
    kh = split_heads(linear(k, proj.wk, proj.bk))
    vh = split_heads(linear(v, proj.wv, proj.bv))

    scores = mul(matmul(qh, transpose(kh, (0, 2, 1))), 1.0 / math.sqrt(dk))
    attn = softmax(scores, axis=-1)
    ctx = matmul(attn, vh)  # [H, Lq, dk]
    merged = reshape(transpose(ctx, (1, 0, 2)), (q.shape[0], C))
    return linear(merged, proj.wo, proj.bo)


# ---------------------------------------------------------------------------
# operator sugar on Tensor

Tensor.__add__ = add
Tensor.__radd__ = add
Tensor.__mul__ = mul
Tensor.__rmul__ = mul
Tensor.__sub__ = sub
Tensor.__rsub__ = lambda a, b: add(neg(a), b)
Tensor.__truediv__ = div
Tensor.__neg__ = neg
Tensor.__matmul__ = matmul
