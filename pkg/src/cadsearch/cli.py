"""Command-line entry point: ingest, train, eval, index, query, export-heatmap, serve.

Exit codes: 0 success, 1 validation failure (bad flags or bad inputs),
2 runtime failure. Query-style verbs print JSON on stdout so scripts and the
workbench UI share one contract.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import apply_checkpoint, load_checkpoint
from .corpus import DEFAULT_N_POINTS, ingest, load_manifest, split_records
from .errors import (
    CheckpointError,
    ConfigurationError,
    EvaluationError,
    IngestionError,
    InputDomainError,
    ManifestError,
    UndefinedSimilarityError,
)
from .evaluation import evaluate, index_from_embeddings, load_index, rank_gallery, save_index, similarity_matrix
from .model import ModelConfig, RetrievalModel
from .trainer import DATASET_PRESETS, ABLATIONS, TrainConfig, embed_records, fit

logger = logging.getLogger(__name__)

_VALIDATION_ERRORS = (
    InputDomainError,
    ManifestError,
    IngestionError,
    ConfigurationError,
    CheckpointError,
    EvaluationError,
    UndefinedSimilarityError,
    FileNotFoundError,
)


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on unknown verbs/flags, per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_model(checkpoint_path: str, with_decoder: bool = False) -> RetrievalModel:
    data = load_checkpoint(checkpoint_path)
    config = data.config()
    if not with_decoder and config.use_decoder:
        from dataclasses import replace

        config = replace(config, use_decoder=False)
    model = RetrievalModel(config)
    apply_checkpoint(model, data, skip_decoder=not with_decoder)
    model.eval()
    return model


def _cmd_ingest(args) -> int:
    summary = ingest(args.manifest, args.out, args.points_per_model, args.seed)
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_train(args) -> int:
    records = load_manifest(args.manifest, points_per_model=args.points_per_model, seed=args.seed)
    preset = DATASET_PRESETS[args.dataset]
    mask_ratio = preset["mask_ratio"] if args.mask_ratio is None else args.mask_ratio
    lam = preset["lam"] if args.lam is None else args.lam
    flags = ABLATIONS[args.ablation]
    config = TrainConfig(
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        mask_ratio=mask_ratio,
        lam=lam,
        seed=args.seed,
        max_steps=args.max_steps,
        **flags,
    )
    n_points = records[0].points.n_points if records else DEFAULT_N_POINTS
    model_config = ModelConfig(
        dim=args.dim,
        n_points=n_points,
        point_backbone=args.point_backbone,
        use_sequence=flags["use_sequence"],
        use_points=flags["use_points"],
        use_decoder=flags["use_decoder"],
    )
    result = fit(records, config, model_config, args.out)
    payload = {"checkpoint": str(result.checkpoint_path), "steps": result.steps}
    if result.best_metrics:
        payload["val"] = result.best_metrics.as_dict()
    print(json.dumps(payload, indent=2))
    return 0


def _embed_split(model, records, split):
    subset = split_records(records, split)
    if not subset:
        raise InputDomainError(f"split {split!r} is empty")
    return subset, *embed_records(model, subset)


def _cmd_eval(args) -> int:
    model = _load_model(args.checkpoint)
    records = load_manifest(args.manifest, points_per_model=model.config.n_points)
    subset, gallery_rows, query_rows = _embed_split(model, records, args.split)
    ids = [r.id for r in subset]
    index = index_from_embeddings(ids, gallery_rows)
    report = evaluate(list(zip(ids, query_rows)), index, {i: i for i in ids})
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(report.as_dict(), fh, indent=2)
    print(json.dumps(report.as_dict(), indent=2))
    return 0


def _cmd_index(args) -> int:
    model = _load_model(args.checkpoint)
    data = load_checkpoint(args.checkpoint)
    records = load_manifest(args.manifest, points_per_model=model.config.n_points)
    subset, gallery_rows, _ = _embed_split(model, records, args.split)
    ids = [r.id for r in subset]
    metadata = {r.id: {"text": r.text.raw} for r in subset}
    index = index_from_embeddings(ids, gallery_rows, metadata)
    save_index(args.out, index, data.model_version, {r.id: r.points.coords for r in subset})
    print(json.dumps({"out": str(args.out), "count": len(index), "model_version": data.model_version}))
    return 0


def _cmd_query(args) -> int:
    model = _load_model(args.checkpoint)
    index, index_version, _ = load_index(args.index)
    data = load_checkpoint(args.checkpoint)
    if index_version != data.model_version:
        raise ConfigurationError(
            f"model version mismatch: checkpoint {data.model_version!r} vs index {index_version!r}"
        )
    vec = model.embed_queries([args.text])[0]
    result = rank_gallery(vec, index, k=args.k)
    print(json.dumps([
        {"id": gid, "score": float(score)} for gid, score in zip(result.ranked_ids, result.scores)
    ]))
    return 0


def _cmd_export_heatmap(args) -> int:
    model = _load_model(args.checkpoint)
    records = load_manifest(args.manifest, points_per_model=model.config.n_points)
    subset = split_records(records, args.split)
    if len(subset) < args.n:
        raise InputDomainError(f"split {args.split!r} has {len(subset)} records, need {args.n}")
    rng = np.random.default_rng(args.seed)
    chosen = [subset[i] for i in rng.choice(len(subset), size=args.n, replace=False)]
    gallery_rows, query_rows = embed_records(model, chosen)
    matrix = similarity_matrix(query_rows, gallery_rows)
    ids = [r.id for r in chosen]
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id\\gallery_id", *ids])
        for qid, row in zip(ids, matrix):
            writer.writerow([qid, *[f"{v:.6f}" for v in row]])
    print(json.dumps({"out": args.out, "n": args.n}))
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    if not args.checkpoint or not args.index:
        raise InputDomainError(
            "serve needs --checkpoint and --index (or CADSEARCH_CHECKPOINT / CADSEARCH_INDEX)"
        )
    serve(args.checkpoint, args.index, args.host, args.port)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="cadsearch", description="Text query front door for CAD model galleries.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="validate a manifest and materialize the preprocessed corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--points-per-model", type=int, default=DEFAULT_N_POINTS)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("train", help="train a retrieval model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default="runs/train")
    p.add_argument("--points-per-model", type=int, default=DEFAULT_N_POINTS)
    p.add_argument("--dataset", choices=sorted(DATASET_PRESETS), default="text2cad")
    p.add_argument("--mask-ratio", type=float, default=None, help="default: dataset preset")
    p.add_argument("--lambda", type=float, default=None, dest="lam", help="default: dataset preset")
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ablation", choices=sorted(ABLATIONS), default="sp+dec")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--point-backbone", choices=("mlp", "attention"), default="attention")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="compute retrieval metrics on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("index", help="build a gallery index from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("query", help="rank a gallery index for a text query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("export-heatmap", help="export a query/gallery similarity matrix as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--n", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_heatmap)

    # flags win over environment; env suits container deployments
    p = sub.add_parser("serve", help="run the HTTP retrieval service")
    p.add_argument("--checkpoint", default=os.environ.get("CADSEARCH_CHECKPOINT"))
    p.add_argument("--index", default=os.environ.get("CADSEARCH_INDEX"))
    p.add_argument("--host", default=os.environ.get("CADSEARCH_HOST", "127.0.0.1"))
    p.add_argument("--port", type=int, default=int(os.environ.get("CADSEARCH_PORT", "8080")))
    p.set_defaults(func=_cmd_serve)

    return parser


def run(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures map to exit 2
        logger.exception("runtime failure: %s", exc)
        return 2


def main() -> None:  # console_scripts entry point
    sys.exit(run())


if __name__ == "__main__":
    main()
