"""Inference-time joint embeddings and similarity.

The CAD-side embedding concatenates the pooled sequence and point features;
the text-side embedding duplicates the pooled text feature to match the
doubled dimension. Each branch is L2-normalized before concatenation, which
makes the joint cosine similarity equal the mean of the two branch cosines.

Alternative fusion strategies (linear, self-attention, cross-attention,
feature-wise modulation) are provided as trainable modules for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .attention import CrossAttentionBlock, TransformerLayer
from .encoders import FeatureMap, pool
from .errors import ConfigurationError, InputDomainError, UndefinedSimilarityError

FUSION_VARIANTS = ("concat", "concat_linear", "concat_selfattn", "crossattn", "modulation")


@dataclass(frozen=True)
class JointEmbedding:
    vec: np.ndarray  # (2D,) float
    kind: str  # "cad" | "text"

    @property
    def normalized(self) -> bool:
        return bool(abs(np.linalg.norm(self.vec) - 1.0) < 1e-6)


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Unit-normalize along the last axis; zero vectors pass through."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(norm > 0, v / np.where(norm > 0, norm, 1.0), v)


def fuse_cad(f_s: np.ndarray, f_p: np.ndarray) -> JointEmbedding:
    """CAD joint embedding: [normalize(f_s); normalize(f_p)], dimension 2D."""
    f_s = np.asarray(f_s, dtype=np.float64).reshape(-1)
    f_p = np.asarray(f_p, dtype=np.float64).reshape(-1)
    if f_s.shape != f_p.shape:
        raise InputDomainError(f"branch dimension mismatch: {f_s.shape} vs {f_p.shape}")
    return JointEmbedding(np.concatenate([l2_normalize(f_s), l2_normalize(f_p)]), "cad")


def fuse_text(f_t: np.ndarray) -> JointEmbedding:
    """Text joint embedding: the normalized pooled text feature, duplicated."""
    f_t = l2_normalize(np.asarray(f_t, dtype=np.float64).reshape(-1))
    return JointEmbedding(np.concatenate([f_t, f_t]), "text")


def similarity(t: JointEmbedding, m: JointEmbedding) -> float:
    """Cosine similarity between a text and a CAD joint embedding, in [-1, 1]."""
    nt = np.linalg.norm(t.vec)
    nm = np.linalg.norm(m.vec)
    if nt == 0.0 or nm == 0.0:
        raise UndefinedSimilarityError("cosine similarity undefined for zero-norm embedding")
    return float(np.clip(np.dot(t.vec, m.vec) / (nt * nm), -1.0, 1.0))


class CadFusion(nn.Module):
    """Configurable fusion of sequence and point token streams.

    Output dimension is 2D for concat-style variants and D for variants
    that merge the streams (self/cross-attention, modulation); D-dim
    outputs are compared against un-duplicated text features.
    """

    def __init__(self, variant: str = "concat", dim: int = 256, n_heads: int = 8):
        super().__init__()
        if variant not in FUSION_VARIANTS:
            raise ConfigurationError(f"unknown fusion variant {variant!r}; options: {FUSION_VARIANTS}")
        self.variant = variant
        self.dim = dim
        if variant == "concat_linear":
            self.linear = nn.Linear(2 * dim, 2 * dim)
        elif variant == "concat_selfattn":
            self.layer = TransformerLayer(dim, n_heads)
        elif variant == "crossattn":
            self.s_to_p = CrossAttentionBlock(dim, n_heads)
            self.p_to_s = CrossAttentionBlock(dim, n_heads)
        elif variant == "modulation":
            self.film = nn.Linear(dim, 2 * dim)

    @property
    def output_dim(self) -> int:
        return 2 * self.dim if self.variant in ("concat", "concat_linear") else self.dim

    def forward(self, f_s: FeatureMap, f_p: FeatureMap) -> torch.Tensor:
        if self.variant == "concat":
            # Same code path as the inference-time joint embedding.
            rows = [
                fuse_cad(s, p).vec
                for s, p in zip(pool(f_s).detach().cpu().numpy(), pool(f_p).detach().cpu().numpy())
            ]
            return torch.as_tensor(np.stack(rows), dtype=f_s.values.dtype, device=f_s.values.device)
        if self.variant == "concat_linear":
            return self.linear(torch.cat([pool(f_s), pool(f_p)], dim=-1))
        if self.variant == "concat_selfattn":
            values = torch.cat([f_s.values, f_p.values], dim=1)
            mask = torch.cat([f_s.mask, f_p.mask], dim=1)
            fused = self.layer(values, mask)
            return pool(FeatureMap(fused, mask))
        if self.variant == "crossattn":
            s_att = self.s_to_p(f_s.values, f_p.values, kv_mask=f_p.mask)
            p_att = self.p_to_s(f_p.values, f_s.values, kv_mask=f_s.mask)
            pooled_s = pool(FeatureMap(s_att, f_s.mask))
            pooled_p = pool(FeatureMap(p_att, f_p.mask))
            return 0.5 * (pooled_s + pooled_p)
        # modulation: the point feature produces per-channel scale and shift.
        scale, shift = self.film(pool(f_p)).chunk(2, dim=-1)
        return scale * pool(f_s) + shift


def fuse_variant(strategy: CadFusion, f_s: FeatureMap, f_p: FeatureMap) -> torch.Tensor:
    """Apply a configured fusion strategy to batched feature maps."""
    return strategy(f_s, f_p)
