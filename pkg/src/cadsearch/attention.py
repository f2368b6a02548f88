"""Attention primitives shared by the encoders and the feature decoder.

All blocks are pre-norm residual with GELU feed-forwards. Masking is over
keys: padded key rows get -inf logits, so outputs at valid rows are
unchanged by the presence of padding.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .errors import ConfigurationError


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention: softmax(Q K^T / sqrt(d_k)) V.

    Q comes from ``query``; K and V come from ``keyvalue`` (pass the same
    tensor for self-attention). d_k is the per-head query dimension.
    """

    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        if dim % n_heads != 0:
            raise ConfigurationError(f"dim {dim} not divisible by n_heads {n_heads}")
        self.dim = dim
        self.n_heads = n_heads
        self.d_k = dim // n_heads
        self.w_q = nn.Linear(dim, dim)
        self.w_k = nn.Linear(dim, dim)
        self.w_v = nn.Linear(dim, dim)
        self.w_o = nn.Linear(dim, dim)

    def forward(
        self,
        query: torch.Tensor,  # (B, Lq, D)
        keyvalue: torch.Tensor,  # (B, Lk, D)
        key_mask: torch.Tensor | None = None,  # (B, Lk) bool, True = valid
    ) -> torch.Tensor:
        if query.shape[-1] != self.dim or keyvalue.shape[-1] != self.dim:
            raise ConfigurationError(
                f"feature dim mismatch: got {query.shape[-1]}/{keyvalue.shape[-1]}, expected {self.dim}"
            )
        b, lq, _ = query.shape
        lk = keyvalue.shape[1]

        def heads(x: torch.Tensor, n: int) -> torch.Tensor:
            return x.view(b, n, self.n_heads, self.d_k).transpose(1, 2)  # (B, H, L, d_k)

        q = heads(self.w_q(query), lq)
        k = heads(self.w_k(keyvalue), lk)
        v = heads(self.w_v(keyvalue), lk)

        logits = q @ k.transpose(-2, -1) / math.sqrt(self.d_k)  # (B, H, Lq, Lk)
        if key_mask is not None:
            logits = logits.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        # Rows with zero valid keys softmax to NaN; they are padding queries.
        weights = torch.nan_to_num(weights, nan=0.0)
        out = (weights @ v).transpose(1, 2).reshape(b, lq, self.dim)
        return self.w_o(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class TransformerLayer(nn.Module):
    """Pre-norm self-attention block: x + attn(LN(x)), then x + ffn(LN(x))."""

    def __init__(self, dim: int, n_heads: int, ffn_mult: int = 4):
        super().__init__()
        self.norm_attn = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, n_heads)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_mult * dim)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        h = self.norm_attn(x)
        x = x + self.attn(h, h, key_mask=mask)
        x = x + self.ffn(self.norm_ffn(x))
        return x


class CrossAttentionBlock(nn.Module):
    """Pre-norm cross-attention block (no self-attention sub-layer).

    Queries attend onto an external key/value stream, then pass through a
    feed-forward; both sub-layers are residual.
    """

    def __init__(self, dim: int, n_heads: int, ffn_mult: int = 4):
        super().__init__()
        self.norm_q = nn.LayerNorm(dim)
        self.norm_kv = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, n_heads)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_mult * dim)

    def attend(
        self, q: torch.Tensor, kv: torch.Tensor, kv_mask: torch.Tensor | None = None
    ) -> torch.Tensor:
        """The cross-attention sub-layer output (before the residual add)."""
        return self.attn(self.norm_q(q), self.norm_kv(kv), key_mask=kv_mask)

    def forward(
        self, q: torch.Tensor, kv: torch.Tensor, kv_mask: torch.Tensor | None = None
    ) -> torch.Tensor:
        q = q + self.attend(q, kv, kv_mask)
        q = q + self.ffn(self.norm_ffn(q))
        return q


def sinusoidal_positions(max_len: int, dim: int) -> torch.Tensor:
    """Fixed sinusoidal positional table of shape (max_len, dim)."""
    position = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(max_len, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div[: dim // 2])
    return table.to(torch.float32)
