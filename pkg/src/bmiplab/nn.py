"""Transformer building blocks on top of the tensor core.

Attention always returns its post-softmax weight map alongside the output;
the aggregation gates read those maps, so they are first-class citizens here
rather than a debugging afterthought.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, affine, gelu, layer_norm

LAYER_NORM_EPS = 1e-5  # fixed, not configurable: keeps checkpoints portable


def normal_param(rng: np.random.Generator, shape: tuple, std: float = 0.02) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


class Linear:
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, std: float = 0.02):
        self.weight = normal_param(rng, (n_in, n_out), std)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.weight, self.bias)

    def named_params(self, prefix: str):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


class LayerNorm:
    def __init__(self, width: int):
        self.gain = Tensor(np.ones(width), requires_grad=True)
        self.bias = Tensor(np.zeros(width), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, eps=LAYER_NORM_EPS)

    def named_params(self, prefix: str):
        return [(f"{prefix}.gain", self.gain), (f"{prefix}.bias", self.bias)]


class MultiHeadAttention:
    """Self-attention over a token sequence, returning the weight map.

    Input is [n, width] or [batch, n, width]; the returned map is
    [heads, n_q, n_k] (or [batch, heads, n_q, n_k]) and each query row sums
    to one per head. ``blocked_keys`` masks the listed key positions out of
    every query's pre-softmax logits, which severs all influence of those
    tokens on other positions (used by structural gradient tests).
    """

    def __init__(self, rng: np.random.Generator, width: int, heads: int):
        if width % heads != 0:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.width = width
        self.heads = heads
        self.head_dim = width // heads
        self.q_proj = Linear(rng, width, width)
        self.k_proj = Linear(rng, width, width)
        self.v_proj = Linear(rng, width, width)
        self.out_proj = Linear(rng, width, width)

    def __call__(self, x: Tensor, blocked_keys: list[int] | None = None):
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape((1,) + x.shape)
        b, n, _ = x.shape
        h, hd = self.heads, self.head_dim

        def split(t: Tensor) -> Tensor:
            # [b, n, width] -> [b, h, n, hd]
            return t.reshape((b, n, h, hd)).transpose(0, 2, 1, 3)

        q = split(self.q_proj(x))
        k = split(self.k_proj(x))
        v = split(self.v_proj(x))

        logits = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(hd))
        if blocked_keys:
            mask = np.zeros((1, 1, 1, n))
            mask[..., list(blocked_keys)] = -1e30
            logits = logits + Tensor(mask)
        attn = logits.softmax(axis=-1)  # [b, h, n, n]

        out = attn @ v  # [b, h, n, hd]
        out = out.transpose(0, 2, 1, 3).reshape((b, n, self.width))
        out = self.out_proj(out)
        if squeeze:
            return out.reshape((n, self.width)), attn.reshape((h, n, n))
        return out, attn

    def named_params(self, prefix: str):
        out = []
        for sub, mod in (("q", self.q_proj), ("k", self.k_proj), ("v", self.v_proj), ("out", self.out_proj)):
            out += mod.named_params(f"{prefix}.{sub}")
        return out


class FeedForward:
    def __init__(self, rng: np.random.Generator, width: int, hidden: int):
        self.fc1 = Linear(rng, width, hidden)
        self.fc2 = Linear(rng, hidden, width)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))

    def named_params(self, prefix: str):
        return self.fc1.named_params(f"{prefix}.fc1") + self.fc2.named_params(f"{prefix}.fc2")


class TransformerBlock:
    """Pre-norm block: x + attn(ln1(x)), then + ffn(ln2(.))."""

    def __init__(self, rng: np.random.Generator, width: int, heads: int, ffn_mult: int = 2):
        self.ln1 = LayerNorm(width)
        self.attn = MultiHeadAttention(rng, width, heads)
        self.ln2 = LayerNorm(width)
        self.ffn = FeedForward(rng, width, ffn_mult * width)

    def __call__(self, x: Tensor, blocked_keys: list[int] | None = None):
        attn_out, attn_map = self.attn(self.ln1(x), blocked_keys=blocked_keys)
        h = x + attn_out
        out = h + self.ffn(self.ln2(h))
        return out, attn_map

    def named_params(self, prefix: str):
        return (
            self.ln1.named_params(f"{prefix}.ln1")
            + self.attn.named_params(f"{prefix}.attn")
            + self.ln2.named_params(f"{prefix}.ln2")
            + self.ffn.named_params(f"{prefix}.ffn")
        )
