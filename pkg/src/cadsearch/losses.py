"""Training objectives: bidirectional InfoNCE retrieval loss, masked-feature
reconstruction loss, and their weighted sum with a learnable temperature."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoders import FeatureMap
from .errors import InputDomainError, TrainingDivergenceError

MAX_LOGIT_SCALE = 100.0


class Temperature(nn.Module):
    """Learnable softmax temperature stored as log(1/tau), CLIP-style.

    The scale 1/tau is clamped to at most 100, so tau stays positive.
    """

    def __init__(self, init_tau: float = 0.07):
        super().__init__()
        self.logit_scale = nn.Parameter(torch.tensor(math.log(1.0 / init_tau)))

    @property
    def scale(self) -> torch.Tensor:
        return self.logit_scale.exp().clamp(max=MAX_LOGIT_SCALE)

    @property
    def tau(self) -> torch.Tensor:
        return 1.0 / self.scale

    def clamp_(self) -> None:
        """Clamp the raw parameter in place; call after each optimizer step."""
        with torch.no_grad():
            self.logit_scale.clamp_(max=math.log(MAX_LOGIT_SCALE))


@dataclass
class LossReport:
    l_ret: float
    l_rec: float
    l_total: float
    lam: float
    tau: float
    directions: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        out = {"l_ret": self.l_ret, "l_rec": self.l_rec, "l_total": self.l_total, "tau": self.tau}
        out.update(self.directions)
        return out


def cosine_similarity_matrix(f_a: torch.Tensor, f_b: torch.Tensor) -> torch.Tensor:
    """Pairwise cosine similarities, shape (B, B)."""
    return F.normalize(f_a, dim=-1) @ F.normalize(f_b, dim=-1).T


def info_nce_direction(f_a: torch.Tensor, f_b: torch.Tensor, tau: torch.Tensor | float) -> torch.Tensor:
    """One InfoNCE direction: -mean_i log softmax_j(cos(f_a[i], f_b[j]) / tau)[i].

    The matched pair sits on the diagonal; other batch items are negatives.
    """
    b = f_a.shape[0]
    if b < 2:
        raise InputDomainError(f"contrastive loss needs a batch of at least 2, got {b}")
    if f_b.shape[0] != b:
        raise InputDomainError(f"batch size mismatch: {b} vs {f_b.shape[0]}")
    logits = cosine_similarity_matrix(f_a, f_b) / tau
    labels = torch.arange(b, device=logits.device)
    return F.cross_entropy(logits, labels)


def retrieval_loss(
    f_t: torch.Tensor,
    f_s: torch.Tensor | None,
    f_p: torch.Tensor | None,
    tau: torch.Tensor | float,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Bidirectional InfoNCE over the enabled text pairings.

    With both branches: (t2s + s2t)/2 + (t2p + p2t)/2. A disabled branch
    (None) drops its half.
    """
    if f_s is None and f_p is None:
        raise InputDomainError("retrieval loss needs at least one CAD branch")
    directions: dict[str, torch.Tensor] = {}
    total = torch.zeros((), dtype=f_t.dtype, device=f_t.device)
    for name, feats in (("s", f_s), ("p", f_p)):
        if feats is None:
            continue
        fwd = info_nce_direction(f_t, feats, tau)
        bwd = info_nce_direction(feats, f_t, tau)
        directions[f"t2{name}"] = fwd
        directions[f"{name}2t"] = bwd
        total = total + 0.5 * (fwd + bwd)
    return total, directions


def reconstruction_loss(pred: FeatureMap, target: FeatureMap) -> torch.Tensor:
    """Mean over the batch of per-sample squared errors on valid rows.

    The target must already be gradient-stopped; only the prediction branch
    carries gradients.
    """
    if pred.values.shape != target.values.shape:
        raise InputDomainError(
            f"shape mismatch: {tuple(pred.values.shape)} vs {tuple(target.values.shape)}"
        )
    if target.values.requires_grad:
        raise InputDomainError("reconstruction target must be detached (gradient-stopped)")
    weights = pred.mask.to(pred.values.dtype).unsqueeze(-1)
    sq = ((pred.values - target.values) ** 2) * weights
    return sq.sum() / pred.values.shape[0]


def total_loss(l_ret: torch.Tensor, l_rec: torch.Tensor | float, lam: float) -> torch.Tensor:
    """Weighted combination l_ret + lam * l_rec."""
    if lam < 0:
        raise InputDomainError(f"loss weight must be >= 0, got {lam}")
    l_rec_t = torch.as_tensor(l_rec, dtype=l_ret.dtype, device=l_ret.device)
    combined = l_ret + lam * l_rec_t
    if not torch.isfinite(combined):
        raise TrainingDivergenceError(
            f"non-finite loss: l_ret={float(l_ret.detach())}, l_rec={float(l_rec_t.detach())}"
        )
    return combined
