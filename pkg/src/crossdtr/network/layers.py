"""Parameterized building blocks: linear/MLP, attention, transformer layers.

Sub-layers are pre-norm (``x + f(norm(x))``), so a layer whose non-residual
weights are all zero is an exact identity on its input.
"""

from __future__ import annotations

import numpy as np

from ..tensor import (
    AttentionProjections,
    Tensor,
    add,
    conv2d,
    linear,
    multi_head_attention,
    relu,
    reshape,
)
from ..tensor import layer_norm as ln_op


class Module:
    """Minimal parameter container; children discovered via attributes."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{key}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{key}.{i}"] = item
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        """Copy arrays into parameters by name; shapes must match exactly."""
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise ValueError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != parameter {p.data.shape}")
            p.data = arr.astype(p.data.dtype)


def _init(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True):
        self.w = _init(rng, (d_in, d_out), d_in, d_out)
        self.b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)


class Conv2d(Module):
    def __init__(self, rng, c_in: int, c_out: int, kernel: int, stride: int = 1, padding: int = 0):
        fan = kernel * kernel
        self.stride = stride
        self.padding = padding
        self.w = _init(rng, (c_out, c_in, kernel, kernel), c_in * fan, c_out * fan)
        self.b = Tensor(np.zeros(c_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        out = conv2d(x, self.w, stride=self.stride, padding=self.padding)
        return add(out, reshape(self.b, (self.b.shape[0], 1, 1)))


class MLP(Module):
    """Stack of linears with ReLU between (none after the last)."""

    def __init__(self, rng, dims: list[int]):
        self.layers = [Linear(rng, a, b) for a, b in zip(dims, dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i + 1 < len(self.layers):
                x = relu(x)
        return x


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ln_op(x, self.gain, self.bias)


class Attention(Module):
    def __init__(self, rng, dim: int, heads: int):
        self.heads = heads
        self.proj = AttentionProjections(
            wq=_init(rng, (dim, dim), dim, dim),
            wk=_init(rng, (dim, dim), dim, dim),
            wv=_init(rng, (dim, dim), dim, dim),
            wo=_init(rng, (dim, dim), dim, dim),
            bq=Tensor(np.zeros(dim), requires_grad=True),
            bk=Tensor(np.zeros(dim), requires_grad=True),
            bv=Tensor(np.zeros(dim), requires_grad=True),
            bo=Tensor(np.zeros(dim), requires_grad=True),
        )

    def __call__(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        return multi_head_attention(q, k, v, self.heads, self.proj)

    # Module discovers parameters through attributes; expose the dataclass.
    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        names = ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")
        return {f"{prefix}{n}": getattr(self.proj, n) for n in names}


class FeedForward(Module):
    def __init__(self, rng, dim: int, hidden: int):
        self.fc1 = Linear(rng, dim, hidden)
        self.fc2 = Linear(rng, hidden, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(x)))


class EncoderLayer(Module):
    """Self-attention over flattened feature pixels, then a feed-forward."""

    def __init__(self, rng, dim: int, heads: int, ffn_hidden: int):
        self.norm1 = LayerNorm(dim)
        self.attn = Attention(rng, dim, heads)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(rng, dim, ffn_hidden)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = add(x, self.attn(h, h, h))
        x = add(x, self.ffn(self.norm2(x)))
        return x


class DecoderLayer(Module):
    """Query self-attention, cross-depth attention, cross-view attention, FFN.

    Cross-depth runs before cross-view so depth hints propose candidate areas
    first. ``query_pos`` is added to the attention queries (and to the keys of
    the self-attention). The cross-view keys arrive with their 3D positional
    embedding already added.
    """

    def __init__(self, rng, dim: int, heads: int, ffn_hidden: int,
                 self_attention: bool = True, cross_depth: bool = True):
        self.self_attention = self_attention
        self.cross_depth = cross_depth
        if self_attention:
            self.norm_self = LayerNorm(dim)
            self.attn_self = Attention(rng, dim, heads)
        if cross_depth:
            self.norm_depth = LayerNorm(dim)
            self.attn_depth = Attention(rng, dim, heads)
        self.norm_view = LayerNorm(dim)
        self.attn_view = Attention(rng, dim, heads)
        self.norm_ffn = LayerNorm(dim)
        self.ffn = FeedForward(rng, dim, ffn_hidden)

    def __call__(
        self,
        x: Tensor,
        query_pos: Tensor,
        depth_kv: Tensor,
        view_keys: Tensor,
        view_values: Tensor,
        query_pos_view: Tensor | None = None,
    ) -> Tensor:
        if query_pos_view is None:
            query_pos_view = query_pos
        if self.self_attention:
            h = self.norm_self(x)
            hp = add(h, query_pos)
            x = add(x, self.attn_self(hp, hp, h))
        if self.cross_depth:
            h = self.norm_depth(x)
            x = add(x, self.attn_depth(add(h, query_pos), depth_kv, depth_kv))
        h = self.norm_view(x)
        x = add(x, self.attn_view(add(h, query_pos_view), view_keys, view_values))
        x = add(x, self.ffn(self.norm_ffn(x)))
        return x


def positional_code_2d(height: int, width: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal code over the feature grid, flattened row-major [H*W, dim].

    Half the channels encode the row coordinate, half the column, each with
    interleaved sine/cosine at geometric frequencies.
    """
    half = dim // 2

    def axis_code(positions: np.ndarray, channels: int) -> np.ndarray:
        pairs = (channels + 1) // 2
        freqs = 1.0 / (100.0 ** (np.arange(pairs) / max(pairs, 1)))
        angles = positions[:, None] * freqs[None, :]
        code = np.zeros((len(positions), 2 * pairs))
        code[:, 0::2] = np.sin(angles)
        code[:, 1::2] = np.cos(angles)
        return code[:, :channels]

    rows = axis_code(np.arange(height, dtype=np.float64), half)
    cols = axis_code(np.arange(width, dtype=np.float64), dim - half)
    grid = np.concatenate(
        [np.repeat(rows, width, axis=0), np.tile(cols, (height, 1))], axis=1
    )
    return grid
