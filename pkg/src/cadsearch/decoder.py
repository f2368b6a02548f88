"""Training-only feature decoder: rebuild sequence features from text and points.

The decoder takes zero-masked, gradient-stopped sequence features as queries
and alternates cross-attention conditioning: odd blocks (1st, 3rd, ...) read
text features as keys/values, even blocks read point features. It is never
used at inference; serving paths must not load it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .attention import CrossAttentionBlock
from .encoders import FeatureMap
from .errors import ConfigurationError, InputDomainError


@dataclass(frozen=True)
class MaskSpec:
    """Which valid rows were zeroed, per batch item."""

    ratio: float
    seed: int
    masked_positions: list[np.ndarray] = field(default_factory=list)


def mask_features(fm: FeatureMap, ratio: float, seed: int) -> tuple[FeatureMap, MaskSpec]:
    """Zero exactly floor(ratio * n_valid) uniformly chosen valid rows per item.

    Padding rows are untouched; the draw is deterministic for a fixed seed.
    ratio 0 is the identity, ratio 1 zeroes every valid row.
    """
    if not 0.0 <= ratio <= 1.0:
        raise InputDomainError(f"mask ratio {ratio} outside [0, 1]")
    rng = np.random.default_rng(seed)
    values = fm.values.clone()
    spec_positions: list[np.ndarray] = []
    for i in range(values.shape[0]):
        valid = np.flatnonzero(fm.mask[i].cpu().numpy())
        n_masked = int(np.floor(ratio * len(valid)))
        chosen = np.sort(rng.choice(valid, size=n_masked, replace=False)) if n_masked else np.array([], dtype=np.int64)
        spec_positions.append(chosen)
        if n_masked:
            values[i, torch.as_tensor(chosen, device=values.device)] = 0.0
    return FeatureMap(values, fm.mask), MaskSpec(ratio, seed, spec_positions)


class FeatureDecoder(nn.Module):
    """Stack of cross-attention blocks with alternating text/point conditioning.

    The block count must be even so both conditioning streams get equal
    depth. Blocks are 1-indexed for parity: block 1 attends to text.
    """

    def __init__(self, dim: int = 256, n_blocks: int = 8, n_heads: int = 8, ffn_mult: int = 4):
        super().__init__()
        if n_blocks % 2 != 0:
            raise ConfigurationError(f"decoder block count must be even, got {n_blocks}")
        self.dim = dim
        self.blocks = nn.ModuleList(CrossAttentionBlock(dim, n_heads, ffn_mult) for _ in range(n_blocks))

    def kv_source(self, block_index: int) -> str:
        """Conditioning stream for a 0-based block index ('text' or 'point')."""
        return "text" if block_index % 2 == 0 else "point"

    def forward(self, masked_seq: FeatureMap, text: FeatureMap, points: FeatureMap) -> FeatureMap:
        x = masked_seq.values
        for i, block in enumerate(self.blocks):
            kv = text if self.kv_source(i) == "text" else points
            x = block(x, kv.values, kv_mask=kv.mask)
        x = x * masked_seq.mask.unsqueeze(-1).to(x.dtype)
        return FeatureMap(x, masked_seq.mask)
