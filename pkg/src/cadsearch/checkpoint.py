"""Checkpoint serialization.

Checkpoints are NPZ archives: a flat map from canonical parameter path
strings (the model's ``named_parameters`` / ``named_buffers`` names, under
``param/`` and ``buffer/`` prefixes) to little-endian float32 arrays with
NPY shape headers, so alternate-language implementations can read them with
any NPZ reader. Optimizer moments live under ``opt/``; the config snapshot,
step counter, and version digest live in an embedded JSON blob.

The model version is a digest over the inference-relevant parameters
(everything except the training-only decoder), so a served model and an
offline index built from the same checkpoint always agree.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .model import ModelConfig, RetrievalModel

FORMAT_VERSION = 1
_META_KEY = "meta_json"
_DECODER_PREFIX = "decoder."


@dataclass
class CheckpointData:
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    opt_state: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.meta.get("step", 0))

    @property
    def model_version(self) -> str:
        return self.meta["model_version"]

    def config(self) -> ModelConfig:
        return ModelConfig(**self.meta["config"])


def model_version_digest(params: dict[str, np.ndarray]) -> str:
    """Digest over inference-relevant parameters, in canonical-path order."""
    h = hashlib.sha256()
    for name in sorted(params):
        if name.startswith(_DECODER_PREFIX):
            continue
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(params[name], dtype="<f4").tobytes())
    return h.hexdigest()[:16]


def save_checkpoint(
    path: str | Path,
    model: RetrievalModel,
    optimizer: torch.optim.Optimizer | None = None,
    step: int = 0,
    extra: dict | None = None,
) -> str:
    """Write a checkpoint; returns the model version digest."""
    arrays: dict[str, np.ndarray] = {}
    params = {name: p.detach().cpu().numpy().astype("<f4") for name, p in model.named_parameters()}
    for name, arr in params.items():
        arrays[f"param/{name}"] = arr
    for name, buf in model.named_buffers():
        arrays[f"buffer/{name}"] = buf.detach().cpu().numpy().astype("<f4")

    opt_meta: dict = {}
    if optimizer is not None:
        names = [name for name, _ in model.named_parameters()]
        id_to_name = {id(p): n for n, p in model.named_parameters()}
        state_steps = {}
        for p, st in optimizer.state.items():
            name = id_to_name.get(id(p))
            if name is None:
                continue
            for key in ("exp_avg", "exp_avg_sq"):
                if key in st:
                    arrays[f"opt/{name}/{key}"] = st[key].detach().cpu().numpy().astype("<f4")
            if "step" in st:
                state_steps[name] = int(st["step"])
        opt_meta = {
            "type": type(optimizer).__name__,
            "param_groups": [
                {k: v for k, v in g.items() if k != "params"} for g in optimizer.param_groups
            ],
            "state_steps": state_steps,
            "param_order": names,
        }

    version = model_version_digest(params)
    meta = {
        "format": FORMAT_VERSION,
        "step": int(step),
        "config": model.config.as_dict(),
        "model_version": version,
        "optimizer": opt_meta,
        "extra": extra or {},
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    arrays[_META_KEY] = np.frombuffer(meta_bytes, dtype=np.uint8)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return version


def load_checkpoint(path: str | Path) -> CheckpointData:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with np.load(path) as archive:
        if _META_KEY not in archive:
            raise CheckpointError(f"{path} is not a checkpoint (missing metadata)")
        meta = json.loads(bytes(archive[_META_KEY].tobytes()).decode("utf-8"))
        params, buffers, opt_state = {}, {}, {}
        for key in archive.files:
            if key.startswith("param/"):
                params[key[len("param/"):]] = archive[key]
            elif key.startswith("buffer/"):
                buffers[key[len("buffer/"):]] = archive[key]
            elif key.startswith("opt/"):
                opt_state[key[len("opt/"):]] = archive[key]
    return CheckpointData(params, buffers, opt_state, meta)


def apply_checkpoint(
    model: RetrievalModel, data: CheckpointData, skip_decoder: bool = False
) -> list[str]:
    """Load parameters/buffers into the model; returns skipped decoder paths.

    With ``skip_decoder``, decoder weights in the checkpoint are ignored (the
    serving path never instantiates the decoder).
    """
    skipped = []
    state: dict[str, torch.Tensor] = {}
    expected = dict(model.state_dict())
    dtype = model.dtype
    for name, arr in {**data.params, **data.buffers}.items():
        if name.startswith(_DECODER_PREFIX) and (skip_decoder or name not in expected):
            skipped.append(name)
            continue
        if name not in expected:
            raise CheckpointError(f"checkpoint parameter {name!r} has no slot in the model")
        state[name] = torch.as_tensor(arr, dtype=dtype)
    missing = [k for k in expected if k not in state]
    if missing:
        raise CheckpointError(f"checkpoint missing parameters: {missing[:5]}")
    model.load_state_dict(state)
    return sorted(skipped)


def restore_optimizer(
    optimizer: torch.optim.Optimizer, model: RetrievalModel, data: CheckpointData
) -> None:
    """Restore Adam moments and step counts saved by ``save_checkpoint``."""
    opt_meta = data.meta.get("optimizer") or {}
    state_steps = opt_meta.get("state_steps", {})
    name_to_param = dict(model.named_parameters())
    for name, param in name_to_param.items():
        exp_avg = data.opt_state.get(f"{name}/exp_avg")
        exp_avg_sq = data.opt_state.get(f"{name}/exp_avg_sq")
        if exp_avg is None or exp_avg_sq is None:
            continue
        optimizer.state[param] = {
            "step": torch.tensor(float(state_steps.get(name, 0))),
            "exp_avg": torch.as_tensor(exp_avg, dtype=param.dtype),
            "exp_avg_sq": torch.as_tensor(exp_avg_sq, dtype=param.dtype),
        }
