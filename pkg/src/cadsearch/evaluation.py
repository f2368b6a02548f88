"""Retrieval evaluation: gallery index, rank statistics, Recall@K / MedR / Rsum.

Scoring is exhaustive (no approximate index); ties break toward the smaller
gallery index so results are reproducible. Ranks are 1-indexed: rank 1 means
the ground-truth item scored highest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EvaluationError, InputDomainError
from .fusion import fuse_cad, l2_normalize

RECALL_KS = (1, 2, 5, 10, 20)


@dataclass(frozen=True)
class MetricReport:
    r1: float
    r2: float
    r5: float
    r10: float
    r20: float
    medr: float
    rsum: float

    def as_dict(self) -> dict[str, float]:
        return {
            "R1": self.r1, "R2": self.r2, "R5": self.r5, "R10": self.r10, "R20": self.r20,
            "MedR": self.medr, "Rsum": self.rsum,
        }


@dataclass(frozen=True)
class RetrievalResult:
    query_id: str
    ranked_ids: list[str]
    scores: np.ndarray
    rank_of_truth: int | None = None


@dataclass
class GalleryIndex:
    """Immutable row-per-model embedding matrix with id-aligned metadata."""

    ids: list[str]
    embeddings: np.ndarray  # (N, dim) float32, unit rows
    metadata: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.ids) != len(self.embeddings):
            raise InputDomainError("ids and embedding rows disagree in length")
        self.embeddings.setflags(write=False)

    def __len__(self) -> int:
        return len(self.ids)

    def position(self, gallery_id: str) -> int:
        try:
            return self.ids.index(gallery_id)
        except ValueError:
            raise EvaluationError(f"gallery id {gallery_id!r} not in index") from None


def build_index(
    gallery: list[tuple[str, np.ndarray, np.ndarray]],
    metadata: dict[str, dict] | None = None,
) -> GalleryIndex:
    """Fuse per-branch pooled features into unit-norm gallery rows, input order."""
    ids = [g[0] for g in gallery]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise InputDomainError(f"duplicate gallery id {dup!r}")
    rows = np.stack([fuse_cad(f_s, f_p).vec for _, f_s, f_p in gallery])
    return GalleryIndex(ids, l2_normalize(rows).astype(np.float32), metadata or {})


def index_from_embeddings(
    ids: list[str], embeddings: np.ndarray, metadata: dict[str, dict] | None = None
) -> GalleryIndex:
    """Index over precomputed embedding rows (normalized here)."""
    if len(set(ids)) != len(ids):
        raise InputDomainError("duplicate gallery ids")
    return GalleryIndex(list(ids), l2_normalize(embeddings).astype(np.float32), metadata or {})


# ---------------------------------------------------------------------------
# Rank statistics
# ---------------------------------------------------------------------------


def rank_of_truth(sims: np.ndarray, truth_index: int) -> int:
    """1-indexed rank of the truth item; ties break toward smaller index."""
    sims = np.asarray(sims, dtype=np.float64)
    if np.any(np.isnan(sims)):
        raise EvaluationError("NaN similarity in ranking")
    if not 0 <= truth_index < len(sims):
        raise InputDomainError(f"truth index {truth_index} out of range [0, {len(sims)})")
    truth_sim = sims[truth_index]
    greater = int(np.sum(sims > truth_sim))
    tied_before = int(np.sum(sims[:truth_index] == truth_sim))
    return 1 + greater + tied_before


def recall_at_k(ranks: list[int] | np.ndarray, k: int) -> float:
    """Percentage of queries whose truth rank is within the top k."""
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise EvaluationError("recall undefined for empty ranks")
    return 100.0 * float(np.sum(ranks <= k)) / ranks.size


def median_rank(ranks: list[int] | np.ndarray) -> float:
    """Median truth rank; even counts average the two middle values."""
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise EvaluationError("median undefined for empty ranks")
    return float(np.median(ranks))


def metrics_from_ranks(ranks: list[int] | np.ndarray) -> MetricReport:
    recalls = [recall_at_k(ranks, k) for k in RECALL_KS]
    return MetricReport(*recalls, medr=median_rank(ranks), rsum=float(sum(recalls)))


# ---------------------------------------------------------------------------
# Query-time ranking and evaluation
# ---------------------------------------------------------------------------


def rank_gallery(
    query_vec: np.ndarray, index: GalleryIndex, k: int | None = None, query_id: str = ""
) -> RetrievalResult:
    """Rank the whole gallery for one query embedding (descending score)."""
    sims = index.embeddings.astype(np.float64) @ l2_normalize(query_vec).reshape(-1)
    if np.any(np.isnan(sims)):
        raise EvaluationError("NaN similarity while ranking")
    order = np.lexsort((np.arange(len(sims)), -sims))  # score desc, index asc on ties
    if k is not None:
        order = order[:k]
    return RetrievalResult(
        query_id=query_id,
        ranked_ids=[index.ids[i] for i in order],
        scores=sims[order],
    )


def evaluate(
    queries: list[tuple[str, np.ndarray]],
    index: GalleryIndex,
    truth_map: dict[str, str],
) -> MetricReport:
    """Aggregate truth ranks over all queries into a MetricReport."""
    ranks = []
    for query_id, vec in queries:
        if query_id not in truth_map:
            raise EvaluationError(f"query {query_id!r} has no ground-truth gallery id")
        truth_pos = index.position(truth_map[query_id])
        sims = index.embeddings.astype(np.float64) @ l2_normalize(vec).reshape(-1)
        ranks.append(rank_of_truth(sims, truth_pos))
    return metrics_from_ranks(ranks)


def similarity_matrix(query_embs: np.ndarray, gallery_embs: np.ndarray) -> np.ndarray:
    """(n, m) cosine matrix between normalized query and gallery embeddings."""
    q = l2_normalize(np.asarray(query_embs))
    g = l2_normalize(np.asarray(gallery_embs))
    return q @ g.T


# ---------------------------------------------------------------------------
# Index persistence (embeddings as raw little-endian float32 + sidecar ids)
# ---------------------------------------------------------------------------


def save_index(
    out_dir: str | Path,
    index: GalleryIndex,
    model_version: str,
    points_by_id: dict[str, np.ndarray] | None = None,
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(index.embeddings, dtype="<f4").tofile(out / "embeddings.f32")
    with open(out / "ids.json", "w", encoding="utf-8") as fh:
        json.dump(index.ids, fh)
    meta = {
        "model_version": model_version,
        "dim": int(index.embeddings.shape[1]),
        "count": len(index),
        "metadata": index.metadata,
    }
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    if points_by_id is not None:
        np.savez(out / "points.npz", **{i: np.asarray(p, dtype="<f4") for i, p in points_by_id.items()})


def load_index(index_dir: str | Path) -> tuple[GalleryIndex, str, Path | None]:
    """Load (index, model_version, points_npz_path) from an index directory."""
    d = Path(index_dir)
    with open(d / "meta.json", "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    with open(d / "ids.json", "r", encoding="utf-8") as fh:
        ids = json.load(fh)
    emb = np.fromfile(d / "embeddings.f32", dtype="<f4").reshape(meta["count"], meta["dim"])
    points_path = d / "points.npz"
    index = GalleryIndex(ids, emb, meta.get("metadata", {}))
    return index, meta["model_version"], points_path if points_path.exists() else None
