"""Corpus ingestion: quantized sketch sequences, sampled point clouds, batching.

The ingestion boundary is a newline-delimited JSON manifest; one record per
line::

    {"id": str, "split": "train|val|test", "text": str,
     "tokens": [[x, y], ...], "points": str}

``tokens`` are integer coordinate bins in [0, 255]; ``points`` is a path
(relative to the manifest) to a little-endian float32 M x 3 binary file.
Records missing a modality are excluded with a logged reason; records with
invalid values raise :class:`ManifestError` naming the record and field.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IngestionError, InputDomainError, ManifestError
from .providers import TextProvider, default_provider

logger = logging.getLogger(__name__)

MAX_SEQ_LEN = 272
COORD_BINS = 256
DEFAULT_N_POINTS = 1024

SPLITS = ("train", "val", "test")

# Split sizes of the full corpus after excluding models without point clouds;
# desk-scale manifests are far smaller, so this is documentation, not a check.
FULL_SCALE_SPLITS = {"train": 119_482, "val": 8_904, "test": 8_023}


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CadSequence:
    """Quantized (x, y) token pairs of a sketch-and-extrude program."""

    tokens: np.ndarray  # (length, 2) int64, bins in [0, 255]

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "tokens", tokens)
        if len(tokens) > MAX_SEQ_LEN:
            raise ManifestError(f"sequence length {len(tokens)} exceeds max {MAX_SEQ_LEN}")
        if len(tokens) and (tokens.min() < 0 or tokens.max() >= COORD_BINS):
            raise ManifestError(
                f"token bins out of [0, {COORD_BINS - 1}]: min {tokens.min()}, max {tokens.max()}"
            )

    @property
    def length(self) -> int:
        return len(self.tokens)

    def valid_mask(self, padded_len: int | None = None) -> np.ndarray:
        n = self.length if padded_len is None else padded_len
        mask = np.zeros(n, dtype=bool)
        mask[: self.length] = True
        return mask


@dataclass(frozen=True)
class PointCloud:
    """N x 3 point coordinates sampled from the CAD solid."""

    coords: np.ndarray  # (n_points, 3) float32

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float32).reshape(-1, 3)
        object.__setattr__(self, "coords", coords)

    @property
    def n_points(self) -> int:
        return len(self.coords)


@dataclass(frozen=True)
class TextQuery:
    """Raw description plus its tokenization under the active provider."""

    raw: str
    token_ids: np.ndarray  # (L_T,) int64
    attn_mask: np.ndarray  # (L_T,) bool

    def __post_init__(self):
        if len(self.token_ids) != len(self.attn_mask):
            raise ManifestError("token_ids and attn_mask length mismatch")

    @property
    def length(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    sequence: CadSequence
    points: PointCloud
    text: TextQuery
    split: str


@dataclass
class Batch:
    """Padded, stacked training batch; record order is preserved."""

    ids: list[str]
    seq_onehot: np.ndarray  # (B, L_max, 2, 256) float32
    seq_mask: np.ndarray  # (B, L_max) bool
    points: np.ndarray  # (B, N, 3) float32
    text_ids: np.ndarray  # (B, T_max) int64
    text_mask: np.ndarray  # (B, T_max) bool

    def __len__(self) -> int:
        return len(self.ids)


# ---------------------------------------------------------------------------
# Coordinate quantization
# ---------------------------------------------------------------------------


def quantize_coord(v: float) -> int:
    """Map a normalized sketch coordinate in [0, 1] to a bin in [0, 255].

    bin = min(floor(v * 256), 255); monotone non-decreasing in v.
    """
    arr = np.asarray(v, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        bad = arr[(arr < 0.0) | (arr > 1.0)].flat[0]
        raise InputDomainError(f"coordinate {bad!r} outside [0, 1]")
    bins = np.minimum(np.floor(arr * COORD_BINS), COORD_BINS - 1).astype(np.int64)
    return int(bins) if np.isscalar(v) or arr.ndim == 0 else bins


def dequantize_bin(b: int) -> float:
    """Center of a coordinate bin; quantize(dequantize(b)) == b for all bins."""
    arr = np.asarray(b, dtype=np.int64)
    if np.any(arr < 0) or np.any(arr >= COORD_BINS):
        raise InputDomainError(f"bin {arr[(arr < 0) | (arr >= COORD_BINS)].flat[0]} outside [0, 255]")
    centers = (arr + 0.5) / COORD_BINS
    return float(centers) if arr.ndim == 0 else centers


def one_hot_sequence(seq: CadSequence, padded_len: int | None = None) -> np.ndarray:
    """One-hot encode a sequence to (L, 2, 256); padding rows are all-zero."""
    n = seq.length if padded_len is None else padded_len
    if n < seq.length:
        raise InputDomainError(f"padded_len {n} shorter than sequence length {seq.length}")
    out = np.zeros((n, 2, COORD_BINS), dtype=np.float32)
    idx = np.arange(seq.length)
    out[idx, 0, seq.tokens[:, 0]] = 1.0
    out[idx, 1, seq.tokens[:, 1]] = 1.0
    return out


# ---------------------------------------------------------------------------
# Point clouds
# ---------------------------------------------------------------------------


def sample_points(source_points: np.ndarray, n: int = DEFAULT_N_POINTS, seed: int = 0) -> PointCloud:
    """Draw n points from an M x 3 source; deterministic for a fixed seed.

    Sampling is without replacement when M >= n (a permutation subset) and
    with replacement otherwise, so n_points stays fixed for batching.
    """
    source = np.asarray(source_points, dtype=np.float32).reshape(-1, 3)
    if len(source) == 0:
        raise IngestionError("empty point source")
    if n < 1:
        raise InputDomainError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(source), size=n, replace=len(source) < n)
    return PointCloud(source[idx])


def normalize_points(pc: PointCloud) -> PointCloud:
    """Center on the centroid and scale the farthest point to unit norm.

    Idempotent; invariant to input translation and uniform scaling. A cloud
    of identical points maps to all-zeros.
    """
    coords = pc.coords.astype(np.float64)
    centered = coords - coords.mean(axis=0, keepdims=True)
    max_norm = np.linalg.norm(centered, axis=1).max()
    if max_norm > 0:
        centered = centered / max_norm
    return PointCloud(centered.astype(np.float32))


def stable_seed(seed: int, tag: str) -> int:
    """Derive a child seed from (seed, tag): stable across runs, orders, workers."""
    digest = hashlib.blake2b(f"{seed}:{tag}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


# ---------------------------------------------------------------------------
# Manifest loading
# ---------------------------------------------------------------------------


def load_manifest(
    path: str | Path,
    points_per_model: int = DEFAULT_N_POINTS,
    seed: int = 0,
    provider: TextProvider | None = None,
) -> list[CorpusRecord]:
    """Load, validate, and preprocess a JSONL manifest into corpus records.

    Point clouds are sampled to ``points_per_model`` and normalized here, so
    downstream consumers always see fixed-size unit-scale geometry.
    """
    path = Path(path)
    provider = provider or default_provider()
    records: list[CorpusRecord] = []
    seen_ids: set[str] = set()
    excluded = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON: {exc}") from exc
            rec_id = raw.get("id")
            if not rec_id:
                raise ManifestError(f"line {lineno}: missing field 'id'")
            if rec_id in seen_ids:
                raise ManifestError(f"record {rec_id!r}: duplicate id")

            missing = [k for k in ("split", "text", "tokens", "points") if raw.get(k) in (None, "")]
            if missing:
                logger.warning("record %r excluded: missing %s", rec_id, ", ".join(missing))
                excluded += 1
                continue
            if raw["split"] not in SPLITS:
                raise ManifestError(f"record {rec_id!r}: field 'split' has invalid value {raw['split']!r}")

            try:
                sequence = CadSequence(np.asarray(raw["tokens"], dtype=np.int64))
            except (ManifestError, ValueError) as exc:
                raise ManifestError(f"record {rec_id!r}: field 'tokens': {exc}") from exc

            points_path = (path.parent / raw["points"]).resolve()
            if not points_path.exists():
                logger.warning("record %r excluded: points file %s not found", rec_id, points_path)
                excluded += 1
                continue
            source = np.fromfile(points_path, dtype="<f4")
            if source.size % 3 != 0:
                raise ManifestError(f"record {rec_id!r}: field 'points': size {source.size} not divisible by 3")
            try:
                cloud = sample_points(source.reshape(-1, 3), points_per_model, stable_seed(seed, rec_id))
            except IngestionError as exc:
                logger.warning("record %r excluded: %s", rec_id, exc)
                excluded += 1
                continue
            cloud = normalize_points(cloud)

            token_ids, attn_mask = provider.tokenize(raw["text"])
            text = TextQuery(raw["text"], token_ids, attn_mask)

            seen_ids.add(rec_id)
            records.append(CorpusRecord(rec_id, sequence, cloud, text, raw["split"]))

    counts = split_counts(records)
    logger.info(
        "loaded %d records (%d excluded): train=%d val=%d test=%d",
        len(records), excluded, counts["train"], counts["val"], counts["test"],
    )
    return records


def split_counts(records: list[CorpusRecord]) -> dict[str, int]:
    counter = Counter(r.split for r in records)
    return {s: counter.get(s, 0) for s in SPLITS}


def split_records(records: list[CorpusRecord], split: str) -> list[CorpusRecord]:
    if split not in SPLITS:
        raise InputDomainError(f"unknown split {split!r}")
    return [r for r in records if r.split == split]


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


def collate(records: list[CorpusRecord], batch_size: int | None = None) -> Batch:
    """Pad and stack the first ``batch_size`` records (default: all) into a Batch."""
    b = len(records) if batch_size is None else batch_size
    if not 1 <= b <= len(records):
        raise InputDomainError(f"batch size {b} not in [1, {len(records)}]")
    chosen = records[:b]

    n_points = {r.points.n_points for r in chosen}
    if len(n_points) != 1:
        raise InputDomainError(f"heterogeneous point counts in batch: {sorted(n_points)}")

    l_max = max(r.sequence.length for r in chosen)
    t_max = max(r.text.length for r in chosen)

    seq_onehot = np.stack([one_hot_sequence(r.sequence, l_max) for r in chosen])
    seq_mask = np.stack([r.sequence.valid_mask(l_max) for r in chosen])
    points = np.stack([r.points.coords for r in chosen])

    text_ids = np.zeros((b, t_max), dtype=np.int64)
    text_mask = np.zeros((b, t_max), dtype=bool)
    for i, r in enumerate(chosen):
        text_ids[i, : r.text.length] = r.text.token_ids
        text_mask[i, : r.text.length] = r.text.attn_mask

    return Batch(
        ids=[r.id for r in chosen],
        seq_onehot=seq_onehot,
        seq_mask=seq_mask,
        points=points,
        text_ids=text_ids,
        text_mask=text_mask,
    )


# ---------------------------------------------------------------------------
# Materialized ingestion (the `ingest` CLI verb)
# ---------------------------------------------------------------------------


def ingest(
    manifest_path: str | Path,
    out_dir: str | Path,
    points_per_model: int = DEFAULT_N_POINTS,
    seed: int = 0,
    provider: TextProvider | None = None,
) -> dict:
    """Materialize a validated, preprocessed corpus under ``out_dir``.

    Writes one NPZ per split (ragged sequences stored padded with lengths,
    sampled normalized point clouds, raw texts as JSON) plus a summary.
    Returns the summary dict.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = load_manifest(manifest_path, points_per_model, seed, provider)
    for split in SPLITS:
        subset = split_records(records, split)
        if not subset:
            continue
        l_max = max(r.sequence.length for r in subset)
        tokens = np.zeros((len(subset), l_max, 2), dtype=np.int64)
        lengths = np.zeros(len(subset), dtype=np.int64)
        for i, r in enumerate(subset):
            tokens[i, : r.sequence.length] = r.sequence.tokens
            lengths[i] = r.sequence.length
        np.savez(
            out / f"{split}.npz",
            ids=np.asarray([r.id for r in subset]),
            tokens=tokens,
            lengths=lengths,
            points=np.stack([r.points.coords for r in subset]),
            texts=np.asarray([r.text.raw for r in subset]),
        )
    summary = {
        "manifest": str(manifest_path),
        "points_per_model": points_per_model,
        "seed": seed,
        "counts": split_counts(records),
    }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    return summary
