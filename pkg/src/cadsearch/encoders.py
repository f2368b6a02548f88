"""Modality encoders: text, command sequence, and point cloud.

Each encoder maps its input to a per-token feature map in a shared
D-dimensional space (D = 256 by default):

* text:     (B, L_T) tokens   -> (B, L_T, D)
* sequence: (B, L_S, 2, 256)  -> (B, L_S, D)
* points:   (B, N_P, 3)       -> (B, N_P, D)

Pooled per-sample vectors are masked means over valid rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .attention import TransformerLayer, sinusoidal_positions
from .corpus import COORD_BINS, MAX_SEQ_LEN
from .errors import ConfigurationError, InputDomainError
from .providers import TextProvider, default_provider


@dataclass
class FeatureMap:
    """Batched per-token features with a row-validity mask."""

    values: torch.Tensor  # (B, L, D)
    mask: torch.Tensor  # (B, L) bool, True = valid

    @property
    def dim(self) -> int:
        return self.values.shape[-1]


def pool(fm: FeatureMap) -> torch.Tensor:
    """Masked average over valid rows, shape (B, D)."""
    counts = fm.mask.sum(dim=1)
    if (counts == 0).any():
        raise InputDomainError("cannot pool a feature map with zero valid rows")
    weights = fm.mask.to(fm.values.dtype)
    summed = (fm.values * weights.unsqueeze(-1)).sum(dim=1)
    return summed / counts.to(fm.values.dtype).unsqueeze(-1)


class TextEncoder(nn.Module):
    """Frozen provider embeddings refined by a trainable transformer stack."""

    def __init__(
        self,
        provider: TextProvider | None = None,
        dim: int = 256,
        n_layers: int = 4,
        n_heads: int = 8,
        ffn_mult: int = 4,
    ):
        super().__init__()
        self.provider = provider or default_provider()
        self.dim = dim
        self.input_proj = nn.Linear(self.provider.dim, dim)
        self.layers = nn.ModuleList(TransformerLayer(dim, n_heads, ffn_mult) for _ in range(n_layers))
        self.norm = nn.LayerNorm(dim)

    def tokenize_batch(self, texts: list[str]) -> tuple[torch.Tensor, torch.Tensor]:
        """Provider-tokenize and embed a batch of raw strings, padded."""
        tokenized = [self.provider.tokenize(t) for t in texts]
        t_max = max(len(ids) for ids, _ in tokenized)
        dtype = self.input_proj.weight.dtype
        emb = torch.zeros(len(texts), t_max, self.provider.dim, dtype=dtype)
        mask = torch.zeros(len(texts), t_max, dtype=torch.bool)
        for i, (ids, m) in enumerate(tokenized):
            emb[i, : len(ids)] = torch.as_tensor(self.provider.embed(ids), dtype=dtype)
            mask[i, : len(ids)] = torch.as_tensor(m)
        return emb, mask

    def forward(self, token_embeddings: torch.Tensor, mask: torch.Tensor) -> FeatureMap:
        x = self.input_proj(token_embeddings)
        for layer in self.layers:
            x = layer(x, mask)
        x = self.norm(x)
        x = x * mask.unsqueeze(-1).to(x.dtype)
        return FeatureMap(x, mask)

    def encode_strings(self, texts: list[str]) -> FeatureMap:
        emb, mask = self.tokenize_batch(texts)
        return self.forward(emb, mask)


class SequenceEncoder(nn.Module):
    """Transformer over quantized (x, y) coordinate tokens.

    The initial embedding of position i is W_x[x_i] + W_y[y_i] + pos[i],
    computed from the one-hot input by matrix product, followed by the
    transformer stack.
    """

    def __init__(
        self,
        dim: int = 256,
        n_layers: int = 5,
        n_heads: int = 8,
        ffn_mult: int = 4,
        max_len: int = MAX_SEQ_LEN,
    ):
        super().__init__()
        self.dim = dim
        self.max_len = max_len
        scale = dim**-0.5
        self.w_x = nn.Parameter(torch.randn(COORD_BINS, dim) * scale)
        self.w_y = nn.Parameter(torch.randn(COORD_BINS, dim) * scale)
        self.register_buffer("positions", sinusoidal_positions(max_len, dim))
        self.layers = nn.ModuleList(TransformerLayer(dim, n_heads, ffn_mult) for _ in range(n_layers))
        self.norm = nn.LayerNorm(dim)

    def initial_embedding(self, onehot: torch.Tensor) -> torch.Tensor:
        """Pre-transformer embedding of a (B, L, 2, 256) one-hot tensor."""
        l = onehot.shape[1]
        if l > self.max_len:
            raise ConfigurationError(f"sequence length {l} exceeds max_len {self.max_len}")
        pos = self.positions[:l].to(onehot.dtype)
        return onehot[:, :, 0] @ self.w_x + onehot[:, :, 1] @ self.w_y + pos

    def forward(self, onehot: torch.Tensor, mask: torch.Tensor) -> FeatureMap:
        x = self.initial_embedding(onehot)
        for layer in self.layers:
            x = layer(x, mask)
        x = self.norm(x)
        x = x * mask.unsqueeze(-1).to(x.dtype)
        return FeatureMap(x, mask)


# ---------------------------------------------------------------------------
# Point backbones
# ---------------------------------------------------------------------------


def knn_indices(coords: torch.Tensor, k: int) -> torch.Tensor:
    """Indices (B, N, k) of the k nearest neighbors of each point (self included)."""
    dists = torch.cdist(coords, coords)  # (B, N, N)
    return dists.topk(k, dim=-1, largest=False).indices


def gather_neighbors(features: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """Gather (B, N, k, C) neighbor features given (B, N, k) indices."""
    b, n, k = idx.shape
    c = features.shape[-1]
    flat = idx.reshape(b, n * k, 1).expand(-1, -1, c)
    return features.gather(1, flat).reshape(b, n, k, c)


class PointMlpBackbone(nn.Module):
    """Shared point-wise MLPs with kNN max aggregation and a global context.

    Per-point outputs are permutation-equivariant: every stage is either
    point-wise or a symmetric max over a geometry-defined neighborhood.
    """

    def __init__(self, hidden: int = 128, out_dim: int = 256, k: int = 16):
        super().__init__()
        self.k = k
        self.out_dim = out_dim
        self.point_mlp = nn.Sequential(nn.Linear(3, hidden), nn.ReLU(), nn.Linear(hidden, hidden))
        self.merge_mlp = nn.Sequential(
            nn.Linear(3 * hidden, hidden), nn.ReLU(), nn.Linear(hidden, out_dim)
        )

    def forward(self, coords: torch.Tensor) -> torch.Tensor:  # (B, N, 3) -> (B, N, out_dim)
        n = coords.shape[1]
        h = self.point_mlp(coords)  # (B, N, hidden)
        idx = knn_indices(coords, min(self.k, n))
        local = gather_neighbors(h, idx).max(dim=2).values  # (B, N, hidden)
        global_ctx = h.max(dim=1, keepdim=True).values.expand(-1, n, -1)
        return self.merge_mlp(torch.cat([h, local, global_ctx], dim=-1))


class LocalAttentionLayer(nn.Module):
    """Attention over kNN neighborhoods with a relative-position logit bias."""

    def __init__(self, dim: int, pos_hidden: int = 32):
        super().__init__()
        self.dim = dim
        self.norm = nn.LayerNorm(dim)
        self.w_q = nn.Linear(dim, dim)
        self.w_k = nn.Linear(dim, dim)
        self.w_v = nn.Linear(dim, dim)
        self.pos_bias = nn.Sequential(nn.Linear(3, pos_hidden), nn.ReLU(), nn.Linear(pos_hidden, 1))
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, 2 * dim), nn.GELU(), nn.Linear(2 * dim, dim))

    def forward(self, x: torch.Tensor, coords: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
        h = self.norm(x)
        q = self.w_q(h)  # (B, N, dim)
        k = gather_neighbors(self.w_k(h), idx)  # (B, N, k, dim)
        v = gather_neighbors(self.w_v(h), idx)
        rel = gather_neighbors(coords, idx) - coords.unsqueeze(2)  # (B, N, k, 3)
        logits = (q.unsqueeze(2) * k).sum(-1) / self.dim**0.5 + self.pos_bias(rel).squeeze(-1)
        weights = torch.softmax(logits, dim=-1)  # (B, N, k)
        x = x + (weights.unsqueeze(-1) * v).sum(dim=2)
        x = x + self.ffn(self.norm_ffn(x))
        return x


class PointAttentionBackbone(nn.Module):
    """Local-attention point backbone: stacked kNN attention layers."""

    def __init__(self, hidden: int = 128, out_dim: int = 256, k: int = 16, n_layers: int = 2):
        super().__init__()
        self.k = k
        self.out_dim = out_dim
        self.input_proj = nn.Sequential(nn.Linear(3, hidden), nn.ReLU(), nn.Linear(hidden, hidden))
        self.layers = nn.ModuleList(LocalAttentionLayer(hidden) for _ in range(n_layers))
        self.out_proj = nn.Linear(hidden, out_dim)

    def forward(self, coords: torch.Tensor) -> torch.Tensor:
        idx = knn_indices(coords, min(self.k, coords.shape[1]))
        x = self.input_proj(coords)
        for layer in self.layers:
            x = layer(x, coords, idx)
        return self.out_proj(x)


POINT_BACKBONES = {"mlp": PointMlpBackbone, "attention": PointAttentionBackbone}


class PointEncoder(nn.Module):
    """Point backbone followed by a two-layer fully-connected head with ReLU.

    Per-point features are retained (the feature decoder consumes them as
    keys/values); pooling happens downstream.
    """

    def __init__(
        self,
        dim: int = 256,
        n_points: int = 1024,
        backbone: str = "mlp",
        backbone_hidden: int = 128,
        k: int = 16,
    ):
        super().__init__()
        if backbone not in POINT_BACKBONES:
            raise ConfigurationError(f"unknown point backbone {backbone!r}; options: {sorted(POINT_BACKBONES)}")
        self.dim = dim
        self.n_points = n_points
        self.backbone = POINT_BACKBONES[backbone](hidden=backbone_hidden, out_dim=dim, k=k)
        self.head = nn.Sequential(nn.Linear(dim, dim), nn.ReLU(), nn.Linear(dim, dim))

    def forward(self, coords: torch.Tensor) -> FeatureMap:  # (B, N, 3)
        if coords.shape[1] != self.n_points:
            raise ConfigurationError(
                f"point count {coords.shape[1]} does not match configured n_points {self.n_points}"
            )
        features = self.head(self.backbone(coords))
        mask = torch.ones(coords.shape[0], coords.shape[1], dtype=torch.bool, device=coords.device)
        return FeatureMap(features, mask)
