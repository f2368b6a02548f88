"""Component ablation harness: sequence-only, points-only, both, both+decoder.

Emits a four-row comparison table with one checkmark column per component
(sequence encoder, point encoder, feature decoder). Full-corpus reference
targets are documentation only, reported when --full-scale is passed; they
are never asserted at desk scale.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .corpus import load_manifest, split_records
from .model import ModelConfig
from .trainer import ABLATIONS, TrainConfig, evaluate_model, fit
from .checkpoint import apply_checkpoint, load_checkpoint
from .model import RetrievalModel

METRIC_COLUMNS = ("R1", "R2", "R5", "R10", "R20", "MedR", "Rsum")

# Reference results on the full text2cad corpus (119k training pairs,
# pretrained text embeddings, 100 epochs); reported for comparison when
# running at full scale, unreachable and unasserted at desk scale.
FULL_SCALE_TARGETS = {
    "s": {"R1": 5.00, "Rsum": 94.96},
    "p": {"R1": 6.73, "Rsum": 108.03},
    "sp": {"R1": 6.99, "Rsum": 113.17},
    "sp+dec": {"R1": 9.71, "Rsum": 133.64},
}


def ablation_matrix(
    records,
    base_config: TrainConfig,
    model_config: ModelConfig | None = None,
    out_dir: str | Path = "runs/ablation",
    eval_split: str = "test",
    full_scale: bool = False,
) -> dict:
    """Train the four component configurations and collect their metrics."""
    out = Path(out_dir)
    rows = []
    eval_records = split_records(records, eval_split) or split_records(records, "train")
    for name, flags in ABLATIONS.items():
        config = replace(base_config, **flags)
        result = fit(records, config, model_config, out / name.replace("+", "_"))
        data = load_checkpoint(result.checkpoint_path)
        model = RetrievalModel(data.config())
        apply_checkpoint(model, data)
        metrics = evaluate_model(model, eval_records)
        rows.append(
            {
                "name": name,
                "seq": flags["use_sequence"],
                "points": flags["use_points"],
                "decoder": flags["use_decoder"],
                **metrics.as_dict(),
            }
        )
    output = {"rows": rows, "eval_split": eval_split}
    if full_scale:
        output["reference_targets"] = FULL_SCALE_TARGETS
    return output


def format_ablation_table(output: dict) -> str:
    """Render the four-row layout: component checkmarks then metric columns."""
    header = ["seq", "points", "decoder", *METRIC_COLUMNS]
    lines = ["  ".join(f"{h:>7}" for h in header)]
    for row in output["rows"]:
        cells = ["✓" if row[c] else "" for c in ("seq", "points", "decoder")]
        cells += [f"{row[m]:.2f}" for m in METRIC_COLUMNS]
        lines.append("  ".join(f"{c:>7}" for c in cells))
    if "reference_targets" in output:
        lines.append("")
        lines.append("full-corpus reference targets (text2cad):")
        for name, target in output["reference_targets"].items():
            lines.append(f"  {name:>7}: " + ", ".join(f"{k}={v}" for k, v in target.items()))
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Run the component ablation harness.")
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--out", default="runs/ablation")
    parser.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    parser.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    parser.add_argument("--lr", type=float, default=TrainConfig.lr)
    parser.add_argument("--mask-ratio", type=float, default=TrainConfig.mask_ratio)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-steps", type=int, default=None)
    parser.add_argument("--eval-split", default="test")
    parser.add_argument("--full-scale", action="store_true",
                        help="report full-corpus reference targets alongside results")
    args = parser.parse_args(argv)

    records = load_manifest(args.manifest)
    config = TrainConfig(
        lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
        mask_ratio=args.mask_ratio, seed=args.seed, max_steps=args.max_steps,
    )
    output = ablation_matrix(records, config, out_dir=args.out,
                             eval_split=args.eval_split, full_scale=args.full_scale)
    print(format_ablation_table(output))
    with open(Path(args.out) / "ablation.json", "w", encoding="utf-8") as fh:
        json.dump(output, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
