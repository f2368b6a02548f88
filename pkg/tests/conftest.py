"""Shared fixtures: synthetic corpora and a small trained model bundle."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
import torch

from cadsearch.checkpoint import load_checkpoint, save_checkpoint
from cadsearch.corpus import collate, load_manifest, split_records
from cadsearch.evaluation import index_from_embeddings, save_index
from cadsearch.model import ModelConfig, RetrievalModel
from cadsearch.synthetic import generate_corpus
from cadsearch.trainer import TrainConfig, embed_records, fit

N_POINTS = 64  # desk-scale point count for fixtures


def small_model_config(**overrides) -> ModelConfig:
    defaults = dict(
        dim=32,
        n_heads=4,
        ffn_mult=2,
        text_layers=1,
        seq_layers=1,
        decoder_blocks=2,
        n_points=N_POINTS,
        point_backbone="mlp",
        point_hidden=16,
        point_k=4,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory):
    """48 synthetic records: 36 train / 6 val / 6 test."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = generate_corpus(root, n=48, seed=7, source_points=512, splits=(0.75, 0.125))
    records = load_manifest(manifest, points_per_model=N_POINTS, seed=7)
    return manifest, records


@dataclass
class TrainedBundle:
    manifest: Path
    records: list
    checkpoint_path: Path
    index_dir: Path
    gallery_records: list
    model: RetrievalModel


@pytest.fixture(scope="session")
def trained_bundle(tmp_path_factory) -> TrainedBundle:
    """A briefly trained small model plus a 100-item gallery index built from it."""
    root = tmp_path_factory.mktemp("bundle")
    manifest = generate_corpus(root / "train", n=64, seed=11, source_points=512, splits=(1.0, 0.0))
    records = load_manifest(manifest, points_per_model=N_POINTS, seed=11)

    config = TrainConfig(
        lr=3e-3, epochs=100, batch_size=32, mask_ratio=0.5, lam=1.0, seed=11, max_steps=240
    )
    result = fit(records, config, small_model_config(), root / "run")

    gallery_manifest = generate_corpus(root / "gallery", n=100, seed=13, source_points=512, splits=(0.0, 0.0))
    gallery_records = load_manifest(gallery_manifest, points_per_model=N_POINTS, seed=13)

    data = load_checkpoint(result.checkpoint_path)
    model = RetrievalModel(data.config())
    from cadsearch.checkpoint import apply_checkpoint

    apply_checkpoint(model, data)
    model.eval()

    gallery_rows, _ = embed_records(model, gallery_records)
    metadata = {r.id: {"text": r.text.raw} for r in gallery_records}
    index = index_from_embeddings([r.id for r in gallery_records], gallery_rows, metadata)
    index_dir = root / "index"
    save_index(index_dir, index, data.model_version, {r.id: r.points.coords for r in gallery_records})

    return TrainedBundle(manifest, records, result.checkpoint_path, index_dir, gallery_records, model)
