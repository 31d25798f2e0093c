"""Serve a trained encoder behind the embeddings HTTP contract.

The request/response shapes match what the mapping engine's embeddings
adapter sends and expects: POST /embeddings with {"model", "input"}
returning {"model", "data": [{"index", "embedding"}]}. The engine can
therefore build an auxiliary store through this endpoint with no code
changes.
"""

from __future__ import annotations

from pathlib import Path

import uvicorn
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .model import Encoder, load_encoder


class EmbeddingsRequest(BaseModel):
    model: str = ""
    input: list[str]


def create_app(encoder: Encoder) -> FastAPI:
    app = FastAPI(title="encoder-sidecar")

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "model_id": encoder.model_id, "dim": encoder.dim}

    @app.post("/embeddings")
    def embeddings(request: EmbeddingsRequest) -> dict:
        if not request.input:
            raise HTTPException(status_code=422, detail="input must be non-empty")
        rows = encoder.embed(request.input)
        return {
            "model": encoder.model_id,
            "data": [
                {"index": i, "embedding": row} for i, row in enumerate(rows)
            ],
        }

    return app


def app_from_artifact(artifact_dir: str | Path) -> FastAPI:
    encoder, _ = load_encoder(artifact_dir)
    return create_app(encoder)


def serve(artifact_dir: str | Path, host: str = "127.0.0.1", port: int = 8901) -> None:
    uvicorn.run(app_from_artifact(artifact_dir), host=host, port=port)
