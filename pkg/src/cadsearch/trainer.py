"""End-to-end training: joint optimization of encoders, decoder, temperature.

The recipe defaults to Adam at lr 1e-4 for 100 epochs with a learnable
temperature; mask ratio and loss weight come from the dataset presets.
Batching, mask sampling, and initialization are all derived from one seed,
so a (corpus, config, platform) triple reproduces identical loss curves.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import apply_checkpoint, load_checkpoint, restore_optimizer, save_checkpoint
from .corpus import Batch, CorpusRecord, collate, split_records, stable_seed
from .errors import ConfigurationError, InputDomainError, TrainingDivergenceError
from .evaluation import MetricReport, evaluate, index_from_embeddings
from .losses import LossReport
from .model import ModelConfig, RetrievalModel
from .providers import TextProvider

logger = logging.getLogger(__name__)

DATASET_PRESETS = {
    "text2cad": {"mask_ratio": 0.5, "lam": 1.0},
    "cadtranslator": {"mask_ratio": 0.0, "lam": 1.0},
}

ABLATIONS = {
    "s": {"use_sequence": True, "use_points": False, "use_decoder": False},
    "p": {"use_sequence": False, "use_points": True, "use_decoder": False},
    "sp": {"use_sequence": True, "use_points": True, "use_decoder": False},
    "sp+dec": {"use_sequence": True, "use_points": True, "use_decoder": True},
}

# Hyperparameter sweep presets.
MASK_RATIO_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
LAMBDA_GRID = (0.1, 0.5, 1.0, 2.0)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 100
    batch_size: int = 256
    mask_ratio: float = 0.5
    lam: float = 1.0
    use_sequence: bool = True
    use_points: bool = True
    use_decoder: bool = True
    seed: int = 0
    grad_clip: float | None = 1.0  # None disables the divergence guard
    ret_weight: float = 1.0  # diagnostic toggle to isolate the reconstruction objective
    max_steps: int | None = None
    val_every: int = 1

    def __post_init__(self):
        if not (self.use_sequence or self.use_points):
            raise ConfigurationError("at least one of use_sequence/use_points must be enabled")
        if self.use_decoder and not (self.use_sequence and self.use_points):
            raise ConfigurationError("use_decoder requires both the sequence and point branches")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigurationError(f"mask_ratio {self.mask_ratio} outside [0, 1]")
        if self.lam < 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")


@dataclass
class FitResult:
    checkpoint_path: Path
    best_metrics: MetricReport | None
    history: list[dict] = field(default_factory=list)
    log_path: Path | None = None
    steps: int = 0


def make_model_config(train: TrainConfig, base: ModelConfig | None = None, **overrides) -> ModelConfig:
    cfg = asdict(base) if base else {}
    cfg.update(overrides)
    cfg.update(
        use_sequence=train.use_sequence,
        use_points=train.use_points,
        use_decoder=train.use_decoder,
    )
    return ModelConfig(**cfg)


def train_step(
    model: RetrievalModel,
    batch: Batch,
    optimizer: torch.optim.Optimizer,
    config: TrainConfig,
    step: int,
) -> LossReport:
    """One optimizer update on all trainable parameters; returns the losses."""
    if (model.seq_encoder is None) == config.use_sequence:
        raise ConfigurationError("model branches inconsistent with config flags")
    model.train()
    tensors = model.batch_to_tensors(batch)
    mask_seed = stable_seed(config.seed, f"mask:{step}")
    try:
        losses = model.training_losses(tensors, config.mask_ratio, config.lam, mask_seed)
    except TrainingDivergenceError as exc:
        raise TrainingDivergenceError(f"aborted at step {step}: {exc}") from exc

    # Zero-weight terms are dropped so their branches receive no update at all.
    terms = []
    if config.ret_weight != 0.0:
        terms.append(config.ret_weight * losses.l_ret)
    if model.decoder is not None and config.lam != 0.0:
        terms.append(config.lam * losses.l_rec)
    total = sum(terms)

    if not torch.isfinite(total):
        directions = {k: float(v.detach()) for k, v in losses.directions.items()}
        raise TrainingDivergenceError(
            f"non-finite loss at step {step}: total={float(total.detach())}, "
            f"tau={float(losses.tau)}, directions={directions}"
        )

    optimizer.zero_grad(set_to_none=True)
    total.backward()
    if config.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    optimizer.step()
    model.temperature.clamp_()

    l_ret = float(losses.l_ret.detach())
    l_rec = float(losses.l_rec.detach())
    return LossReport(
        l_ret=l_ret,
        l_rec=l_rec,
        l_total=l_ret + config.lam * l_rec,
        lam=config.lam,
        tau=float(losses.tau),
        directions={k: float(v.detach()) for k, v in losses.directions.items()},
    )


def iter_batches(records: list[CorpusRecord], batch_size: int, seed: int, epoch: int):
    """Deterministic shuffled batches; tail batches below 2 records are dropped."""
    rng = np.random.default_rng(stable_seed(seed, f"epoch:{epoch}"))
    order = rng.permutation(len(records))
    for start in range(0, len(records), batch_size):
        chunk = [records[i] for i in order[start : start + batch_size]]
        if len(chunk) >= 2:
            yield collate(chunk)


@torch.no_grad()
def embed_records(
    model: RetrievalModel, records: list[CorpusRecord], batch_size: int = 64
) -> tuple[np.ndarray, np.ndarray]:
    """Gallery and query embedding rows for a record list, in record order."""
    if not records:
        raise InputDomainError("cannot embed an empty record list")
    gallery_rows, query_rows = [], []
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        gallery_rows.append(model.embed_gallery(collate(chunk)))
        query_rows.append(model.embed_queries([r.text.raw for r in chunk]))
    return np.vstack(gallery_rows), np.vstack(query_rows)


@torch.no_grad()
def evaluate_model(
    model: RetrievalModel, records: list[CorpusRecord], batch_size: int = 64
) -> MetricReport:
    """Rank every record's text against the gallery of all records."""
    gallery_rows, query_rows = embed_records(model, records, batch_size)
    ids = [r.id for r in records]
    index = index_from_embeddings(ids, gallery_rows)
    queries = list(zip(ids, query_rows))
    return evaluate(queries, index, {i: i for i in ids})


def fit(
    records: list[CorpusRecord],
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    out_dir: str | Path = "runs/default",
    provider: TextProvider | None = None,
    resume_from: str | Path | None = None,
) -> FitResult:
    """Train on the train split, select the best checkpoint by validation Rsum."""
    train = split_records(records, "train")
    if not train:
        raise InputDomainError("empty train split")
    val = split_records(records, "val")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"

    torch.manual_seed(stable_seed(config.seed, "init"))
    model_config = make_model_config(config, model_config)
    model = RetrievalModel(model_config, provider)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)

    step = 0
    if resume_from is not None:
        data = load_checkpoint(resume_from)
        apply_checkpoint(model, data)
        restore_optimizer(optimizer, model, data)
        step = data.step
        logger.info("resumed from %s at step %d", resume_from, step)

    best_rsum = -math.inf
    best_state: dict[str, torch.Tensor] | None = None
    best_metrics: MetricReport | None = None
    history: list[dict] = []
    stop = False

    with open(log_path, "a", encoding="utf-8") as log_fh:
        for epoch in range(config.epochs):
            if stop:
                break
            for batch in iter_batches(train, config.batch_size, config.seed, epoch):
                step += 1
                report = train_step(model, batch, optimizer, config, step)
                log_fh.write(json.dumps({"step": step, **report.as_dict()}) + "\n")
                if config.max_steps is not None and step >= config.max_steps:
                    stop = True
                    break
            if val and (epoch % config.val_every == 0 or stop or epoch == config.epochs - 1):
                metrics = evaluate_model(model, val)
                history.append({"epoch": epoch, "step": step, **metrics.as_dict()})
                if metrics.rsum > best_rsum:
                    best_rsum = metrics.rsum
                    best_metrics = metrics
                    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    if best_state is not None:
        model.load_state_dict(best_state)
    ckpt_path = out / "checkpoint.npz"
    save_checkpoint(ckpt_path, model, optimizer, step=step, extra={"train_config": asdict(config)})
    return FitResult(ckpt_path, best_metrics, history, log_path, step)
