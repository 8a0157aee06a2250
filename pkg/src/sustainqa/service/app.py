"""HTTP facade over an AnswerEngine.

The service owns the long-lived state (provider, index, documents) so
multiple clients can query one deployment; the CLI can act as a thin
client against it via --server.
"""

from __future__ import annotations

from dataclasses import replace

from fastapi import FastAPI, HTTPException

from ..classifier import llm_classify
from ..generation import UnknownIndustryId
from ..pipelines import AllSnippetsRejected, AnswerEngine
from ..providers.base import ProviderError
from .schemas import (
    AskRequest,
    AskResponse,
    ClassifyRequest,
    ClassifyResponse,
    GateRequest,
    GateResponse,
    HealthResponse,
    QueryRequest,
    QueryResponse,
    QueryResultModel,
    RetrievedItemModel,
)


def create_app(engine: AnswerEngine) -> FastAPI:
    app = FastAPI(title="sustainqa", version="0.1.0")
    app.state.engine = engine

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(
            index_size=len(engine.index) if engine.index is not None else 0,
            documents=len(engine.docs),
        )

    @app.post("/gate", response_model=GateResponse)
    def gate(body: GateRequest) -> GateResponse:
        return GateResponse(relevant=engine.relevance_gate(body.query))

    @app.post("/classify", response_model=ClassifyResponse)
    def classify(body: ClassifyRequest) -> ClassifyResponse:
        try:
            industries = llm_classify(
                engine.provider, engine.roles.classifier, body.query, engine._descriptions()
            )
        except UnknownIndustryId as exc:
            raise HTTPException(status_code=502, detail=str(exc))
        except ProviderError as exc:
            raise HTTPException(status_code=502, detail=str(exc))
        return ClassifyResponse(industries=list(industries))

    @app.post("/query", response_model=QueryResponse)
    def query(body: QueryRequest) -> QueryResponse:
        if engine.index is None:
            raise HTTPException(status_code=409, detail="service is running without an index")
        industries = set(body.industries) if body.industries else None
        try:
            if body.retriever == "bm25":
                results = engine.index.bm25(body.query, body.k, industries)
            else:
                vector = engine.provider.embed([body.query])[0]
                if body.retriever == "knn":
                    results = engine.index.knn(vector, body.k, industries)
                elif body.retriever == "hybrid":
                    results = engine.index.hybrid(body.query, vector, body.k, industries)
                else:
                    results = engine.index.mmr(vector, body.k, body.mmr_lambda, industries)
        except ProviderError as exc:
            raise HTTPException(status_code=502, detail=str(exc))
        rows = []
        for r in results:
            chunk = engine.index.chunk(r.chunk_id)
            rows.append(
                QueryResultModel(
                    chunk_id=r.chunk_id,
                    score=r.score,
                    rank=r.rank,
                    industry=chunk.metadata.industry,
                    text=chunk.text,
                )
            )
        return QueryResponse(retriever=body.retriever, results=rows)

    @app.post("/ask", response_model=AskResponse)
    def ask(body: AskRequest) -> AskResponse:
        cfg = engine.config
        if body.pipeline is not None and body.pipeline != cfg.variant:
            cfg = replace(cfg, variant=body.pipeline)
        try:
            answer = engine.answer(body.query, cfg)
        except AllSnippetsRejected as exc:
            raise HTTPException(status_code=502, detail=str(exc))
        except UnknownIndustryId as exc:
            raise HTTPException(status_code=502, detail=str(exc))
        except ProviderError as exc:
            raise HTTPException(status_code=502, detail=str(exc))
        return AskResponse(
            text=answer.text,
            gated=answer.gated,
            pipeline=answer.pipeline,
            retrieved=[
                RetrievedItemModel(ref=r.ref, industry=r.industry, score=r.score)
                for r in answer.retrieved
            ],
            industries=list(answer.industries),
        )

    return app
