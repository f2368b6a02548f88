"""Text embedding providers.

A provider owns tokenization and per-token embeddings for query text. The
provider is a frozen feature extractor: the trainable part of the text
encoder is the transformer stack layered on top of it.

Two implementations:

* ``HashTextProvider`` — deterministic hash-bucket embeddings, no network
  or model download. The default for tests and desk-scale runs.
* ``PretrainedTextProvider`` — wraps a Hugging Face model (CLIP or BERT
  style) as a frozen contextual-embedding extractor. Optional dependency.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


class TextProvider(Protocol):
    """Tokenize text and embed tokens; deterministic for a fixed string."""

    dim: int
    max_length: int

    def tokenize(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        """Return (token_ids, attn_mask), both of length L_T >= 1."""
        ...

    def embed(self, token_ids: np.ndarray) -> np.ndarray:
        """Return per-token embeddings of shape (L_T, dim), float32."""
        ...


@dataclass
class HashTextProvider:
    """Offline provider: tokens hash into buckets with fixed random embeddings.

    Bucket 0 is reserved for the start token, which also stands in for the
    empty string so every query yields at least one token.
    """

    dim: int = 256
    max_length: int = 77
    n_buckets: int = 32768
    seed: int = 914
    _table: np.ndarray | None = field(default=None, repr=False)

    BOS_ID = 0

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return 1 + int.from_bytes(digest, "little") % (self.n_buckets - 1)

    def tokenize(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        tokens = _TOKEN_RE.findall(text.lower())
        ids = [self.BOS_ID] + [self._bucket(t) for t in tokens]
        ids = ids[: self.max_length]
        token_ids = np.asarray(ids, dtype=np.int64)
        return token_ids, np.ones(len(ids), dtype=bool)

    @property
    def table(self) -> np.ndarray:
        if self._table is None:
            rng = np.random.default_rng(self.seed)
            scale = 1.0 / np.sqrt(self.dim)
            self._table = rng.normal(0.0, scale, size=(self.n_buckets, self.dim)).astype(
                np.float32
            )
        return self._table

    def embed(self, token_ids: np.ndarray) -> np.ndarray:
        return self.table[np.asarray(token_ids, dtype=np.int64)]


class PretrainedTextProvider:
    """Frozen Hugging Face text model as a contextual-embedding extractor.

    Requires the ``transformers`` extra and a locally cached model; intended
    for full-scale runs, never exercised by the test suite.
    """

    def __init__(self, model_name: str = "openai/clip-vit-base-patch32", max_length: int = 77):
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise ImportError(
                "PretrainedTextProvider needs the 'pretrained' extra: pip install cadsearch[pretrained]"
            ) from exc
        self._tokenizer = AutoTokenizer.from_pretrained(model_name)
        model = AutoModel.from_pretrained(model_name)
        # CLIP-style wrappers expose a dedicated text tower.
        self._model = model.text_model if hasattr(model, "text_model") else model
        self._model.eval()
        for p in self._model.parameters():
            p.requires_grad_(False)
        self.max_length = max_length
        self.dim = int(self._model.config.hidden_size)

    def tokenize(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        out = self._tokenizer(
            text if text else " ",
            truncation=True,
            max_length=self.max_length,
            return_tensors="np",
        )
        ids = out["input_ids"][0].astype(np.int64)
        mask = out["attention_mask"][0].astype(bool)
        return ids, mask

    def embed(self, token_ids: np.ndarray) -> np.ndarray:  # pragma: no cover - needs weights
        import torch

        with torch.no_grad():
            ids = torch.as_tensor(token_ids, dtype=torch.long).unsqueeze(0)
            hidden = self._model(input_ids=ids).last_hidden_state[0]
        return hidden.numpy().astype(np.float32)


def default_provider() -> HashTextProvider:
    return HashTextProvider()
