"""HTTP retrieval service: embed a text query, rank the gallery, return top-k.

The inference path is encoders + fusion only; decoder weights present in a
checkpoint are ignored at load time (with a log note). The service refuses
to start when the checkpoint and index disagree on the model version, and is
stateless: responses depend only on (checkpoint, index, request).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from .checkpoint import apply_checkpoint, load_checkpoint
from .errors import ConfigurationError
from .evaluation import GalleryIndex, load_index, rank_gallery
from .model import RetrievalModel
from .providers import TextProvider

logger = logging.getLogger(__name__)


class QueryRequest(BaseModel):
    text: str
    k: int = Field(default=10, ge=1)


class QueryResult(BaseModel):
    id: str
    score: float
    text_snippet: str = ""
    preview_url: str = ""


class QueryResponse(BaseModel):
    results: list[QueryResult]
    model_version: str
    latency_ms: float


@dataclass
class ServiceState:
    model: RetrievalModel
    index: GalleryIndex
    points: dict[str, np.ndarray]
    model_version: str


def load_service_state(
    checkpoint_path: str | Path,
    index_dir: str | Path,
    provider: TextProvider | None = None,
) -> ServiceState:
    data = load_checkpoint(checkpoint_path)
    index, index_version, points_path = load_index(index_dir)
    if index_version != data.model_version:
        raise ConfigurationError(
            f"model version mismatch: checkpoint {data.model_version!r} vs index {index_version!r}; "
            "rebuild the index from this checkpoint"
        )
    config = replace(data.config(), use_decoder=False)
    model = RetrievalModel(config, provider)
    skipped = apply_checkpoint(model, data, skip_decoder=True)
    if skipped:
        logger.info("decoder weights omitted at serve time: %d tensors", len(skipped))
    model.eval()
    points: dict[str, np.ndarray] = {}
    if points_path is not None:
        with np.load(points_path) as npz:
            points = {key: npz[key] for key in npz.files}
    return ServiceState(model, index, points, data.model_version)


def handle_query(state: ServiceState, req: QueryRequest) -> QueryResponse:
    if not req.text.strip():
        raise HTTPException(status_code=400, detail="query text must be non-empty")
    if not 1 <= req.k <= len(state.index):
        raise HTTPException(
            status_code=400, detail=f"k must be in [1, {len(state.index)}], got {req.k}"
        )
    started = time.perf_counter()
    query_vec = state.model.embed_queries([req.text])[0]
    ranked = rank_gallery(query_vec, state.index, k=req.k)
    latency_ms = (time.perf_counter() - started) * 1000.0
    results = [
        QueryResult(
            id=gid,
            score=float(score),
            text_snippet=state.index.metadata.get(gid, {}).get("text", ""),
            preview_url=f"/model/{gid}/points",
        )
        for gid, score in zip(ranked.ranked_ids, ranked.scores)
    ]
    return QueryResponse(results=results, model_version=state.model_version, latency_ms=latency_ms)


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="cadsearch retrieval service")

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "model_version": state.model_version}

    @app.post("/query", response_model=QueryResponse)
    def query(req: QueryRequest) -> QueryResponse:
        return handle_query(state, req)

    @app.get("/model/{model_id}/points")
    def get_points(model_id: str) -> Response:
        if model_id not in state.points:
            raise HTTPException(status_code=404, detail=f"unknown model id {model_id!r}")
        coords = np.ascontiguousarray(state.points[model_id], dtype="<f4")
        return Response(
            content=coords.tobytes(),
            media_type="application/octet-stream",
            headers={"X-Point-Count": str(coords.shape[0])},
        )

    return app


def serve(
    checkpoint_path: str | Path,
    index_dir: str | Path,
    host: str = "127.0.0.1",
    port: int = 8080,
) -> None:  # pragma: no cover - exercised manually / by the CLI
    import uvicorn

    state = load_service_state(checkpoint_path, index_dir)
    uvicorn.run(create_app(state), host=host, port=port)
