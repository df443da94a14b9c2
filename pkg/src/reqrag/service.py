"""HTTP front door over the same pipeline the CLI drives.

Endpoints: POST /query, POST /ingest (staged, applied on re-index),
GET /provenance/{id}, GET /health, GET /metrics. Provenance is persisted
before any answer leaves the process. Malformed bodies return 400 with
per-field diagnostics.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .errors import ConfigError, ReqragError, ValidationError
from .system import RagSystem


class QueryBody(BaseModel):
    query: str = Field(min_length=1)
    dry_run: bool = False
    rerank: bool | None = None
    sparse_only: bool = False
    dense_only: bool = False


class IngestBody(BaseModel):
    doc_id: str
    version_timestamp: str
    title: str = ""
    source_tag: str = ""
    blocks: list[dict] = Field(default_factory=list)
    metadata: dict | None = None


def create_app(system: RagSystem) -> FastAPI:
    app = FastAPI(title="reqrag", version=__version__)

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        diagnostics = [
            {"field": ".".join(str(p) for p in err["loc"] if p != "body"), "message": err["msg"]}
            for err in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": diagnostics})

    @app.exception_handler(ValidationError)
    async def domain_validation_handler(request: Request, exc: ValidationError):
        return JSONResponse(
            status_code=400, content={"detail": [{"field": exc.field or "", "message": str(exc)}]}
        )

    @app.exception_handler(ConfigError)
    async def config_handler(request: Request, exc: ConfigError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(ReqragError)
    async def operational_handler(request: Request, exc: ReqragError):
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    @app.get("/health")
    async def health():
        return {"status": "ok", "service": "reqrag", "version": __version__}

    @app.post("/query")
    async def query(body: QueryBody):
        outcome = system.query(
            body.query,
            dry_run=body.dry_run,
            rerank=body.rerank,
            sparse_only=body.sparse_only,
            dense_only=body.dense_only,
        )
        return {
            "answer": outcome.answer_text,
            "sources": [
                {
                    "chunk_id": c.chunk_id,
                    "dense_score": c.dense_score,
                    "sparse_score": c.sparse_score,
                    "rrf_score": c.rrf_score,
                    "rerank_score": c.rerank_score,
                }
                for c in outcome.candidates
            ],
            "provenance_id": outcome.provenance_id,
            "timings": outcome.timings.as_dict(),
            "dry_run": outcome.dry_run,
        }

    @app.post("/ingest")
    async def ingest(body: IngestBody):
        chunk_ids = system.stage_record(body.model_dump())
        return {"chunk_ids": chunk_ids, "staged": True}

    @app.get("/provenance/{record_id}")
    async def provenance(record_id: str):
        from .provenance import record_to_dict

        record = system.get_provenance(record_id)
        if record is None:
            return JSONResponse(
                status_code=404, content={"detail": f"provenance record not found: {record_id}"}
            )
        return record_to_dict(record)

    @app.get("/metrics")
    async def metrics():
        return system.metrics()

    return app
