"""Full retrieval model: encoders + optional feature decoder + temperature.

Training couples the branches through the bidirectional InfoNCE loss and,
when enabled, the reconstruction decoder. Inference drops the decoder and
ranks galleries with fused embeddings.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .corpus import MAX_SEQ_LEN, Batch
from .decoder import FeatureDecoder, mask_features
from .encoders import FeatureMap, PointEncoder, SequenceEncoder, TextEncoder, pool
from .errors import ConfigurationError
from .fusion import CadFusion, fuse_cad, fuse_text, l2_normalize
from .losses import Temperature, reconstruction_loss, retrieval_loss, total_loss
from .providers import TextProvider


@dataclass
class ModelConfig:
    dim: int = 256
    n_heads: int = 8
    ffn_mult: int = 4
    text_layers: int = 4
    seq_layers: int = 5
    decoder_blocks: int = 8
    max_seq_len: int = MAX_SEQ_LEN
    n_points: int = 1024
    point_backbone: str = "attention"
    point_hidden: int = 128
    point_k: int = 16
    use_sequence: bool = True
    use_points: bool = True
    use_decoder: bool = True
    fusion_variant: str = "concat"
    init_tau: float = 0.07

    def __post_init__(self):
        if not (self.use_sequence or self.use_points):
            raise ConfigurationError("at least one of use_sequence/use_points must be enabled")
        if self.use_decoder and not (self.use_sequence and self.use_points):
            raise ConfigurationError("the feature decoder requires both the sequence and point branches")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingLosses:
    l_ret: torch.Tensor
    l_rec: torch.Tensor
    l_total: torch.Tensor
    tau: torch.Tensor
    directions: dict[str, torch.Tensor] = field(default_factory=dict)


class RetrievalModel(nn.Module):
    def __init__(self, config: ModelConfig, provider: TextProvider | None = None):
        super().__init__()
        self.config = config
        self.text_encoder = TextEncoder(
            provider, config.dim, config.text_layers, config.n_heads, config.ffn_mult
        )
        self.seq_encoder = (
            SequenceEncoder(config.dim, config.seq_layers, config.n_heads, config.ffn_mult, config.max_seq_len)
            if config.use_sequence
            else None
        )
        self.point_encoder = (
            PointEncoder(config.dim, config.n_points, config.point_backbone, config.point_hidden, config.point_k)
            if config.use_points
            else None
        )
        self.decoder = (
            FeatureDecoder(config.dim, config.decoder_blocks, config.n_heads, config.ffn_mult)
            if config.use_decoder
            else None
        )
        self.fusion = (
            CadFusion(config.fusion_variant, config.dim, config.n_heads)
            if config.fusion_variant != "concat"
            else None
        )
        self.temperature = Temperature(config.init_tau)

    @property
    def provider(self) -> TextProvider:
        return self.text_encoder.provider

    @property
    def dtype(self) -> torch.dtype:
        return self.text_encoder.input_proj.weight.dtype

    # -- tensor plumbing ----------------------------------------------------

    def batch_to_tensors(self, batch: Batch) -> dict[str, torch.Tensor]:
        text_emb, text_mask = self._embed_token_ids(batch.text_ids, batch.text_mask)
        return {
            "seq_onehot": torch.as_tensor(batch.seq_onehot, dtype=self.dtype),
            "seq_mask": torch.as_tensor(batch.seq_mask),
            "points": torch.as_tensor(batch.points, dtype=self.dtype),
            "text_emb": text_emb,
            "text_mask": text_mask,
        }

    def _embed_token_ids(self, token_ids: np.ndarray, attn_mask: np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
        b, t = token_ids.shape
        emb = np.zeros((b, t, self.provider.dim), dtype=np.float32)
        for i in range(b):
            n = int(attn_mask[i].sum())
            if n:
                emb[i, :n] = self.provider.embed(token_ids[i, :n])
        return torch.as_tensor(emb, dtype=self.dtype), torch.as_tensor(attn_mask)

    # -- feature extraction ---------------------------------------------------

    def feature_maps(self, tensors: dict[str, torch.Tensor]) -> dict[str, FeatureMap]:
        maps: dict[str, FeatureMap] = {
            "text": self.text_encoder(tensors["text_emb"], tensors["text_mask"])
        }
        if self.seq_encoder is not None:
            maps["seq"] = self.seq_encoder(tensors["seq_onehot"], tensors["seq_mask"])
        if self.point_encoder is not None:
            maps["points"] = self.point_encoder(tensors["points"])
        return maps

    def pooled_features(self, maps: dict[str, FeatureMap]) -> dict[str, torch.Tensor]:
        return {name: pool(fm) for name, fm in maps.items()}

    # -- training objective ---------------------------------------------------

    def training_losses(
        self, tensors: dict[str, torch.Tensor], mask_ratio: float, lam: float, mask_seed: int
    ) -> TrainingLosses:
        maps = self.feature_maps(tensors)
        pooled = self.pooled_features(maps)
        tau = self.temperature.tau

        if self.fusion is not None:
            fused = self.fusion(maps["seq"], maps["points"])
            f_text = pooled["text"]
            if self.fusion.output_dim == 2 * self.config.dim:
                f_text = torch.cat([f_text, f_text], dim=-1)
            l_ret, directions = retrieval_loss(f_text, fused, None, tau)
            directions = {"t2m": directions["t2s"], "m2t": directions["s2t"]}
        else:
            l_ret, directions = retrieval_loss(
                pooled["text"], pooled.get("seq"), pooled.get("points"), tau
            )

        l_rec = torch.zeros((), dtype=l_ret.dtype, device=l_ret.device)
        if self.decoder is not None:
            detached = FeatureMap(maps["seq"].values.detach(), maps["seq"].mask)
            masked, _ = mask_features(detached, mask_ratio, mask_seed)
            recon = self.decoder(masked, maps["text"], maps["points"])
            l_rec = reconstruction_loss(recon, detached)

        l_total = total_loss(l_ret, l_rec, lam)
        return TrainingLosses(l_ret, l_rec, l_total, tau.detach(), directions)

    # -- inference embeddings ---------------------------------------------------

    @torch.no_grad()
    def embed_gallery(self, batch: Batch) -> np.ndarray:
        """Per-record CAD embeddings as unit-norm float32 rows.

        Both branches + concat fusion give 2D-dim rows; a single branch or a
        merging fusion variant gives D-dim rows.
        """
        self.eval()
        tensors = self.batch_to_tensors(batch)
        maps = self.feature_maps(tensors)
        if self.fusion is not None:
            fused = self.fusion(maps["seq"], maps["points"]).cpu().numpy()
            return l2_normalize(fused).astype(np.float32)
        pooled = self.pooled_features(maps)
        if "seq" in pooled and "points" in pooled:
            rows = [
                fuse_cad(s, p).vec
                for s, p in zip(pooled["seq"].cpu().numpy(), pooled["points"].cpu().numpy())
            ]
            return l2_normalize(np.stack(rows)).astype(np.float32)
        branch = pooled.get("seq", pooled.get("points"))
        return l2_normalize(branch.cpu().numpy()).astype(np.float32)

    @torch.no_grad()
    def embed_queries(self, texts: list[str]) -> np.ndarray:
        """Text embeddings matched to the gallery dimension, unit-norm float32."""
        self.eval()
        fm = self.text_encoder.encode_strings(texts)
        f_t = pool(fm).cpu().numpy()
        duplicated = (self.fusion is None and self.config.use_sequence and self.config.use_points) or (
            self.fusion is not None and self.fusion.output_dim == 2 * self.config.dim
        )
        if duplicated:
            rows = np.stack([fuse_text(v).vec for v in f_t])
        else:
            rows = f_t
        return l2_normalize(rows).astype(np.float32)
