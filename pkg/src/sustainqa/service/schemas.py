"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: Literal["ok"] = "ok"
    index_size: int
    documents: int


class AskRequest(BaseModel):
    query: str = Field(min_length=1)
    pipeline: Literal["baseline", "custom_rag", "llm_pipeline"] | None = None


class RetrievedItemModel(BaseModel):
    ref: str
    industry: str
    score: float | None


class AskResponse(BaseModel):
    text: str
    gated: bool
    pipeline: str
    retrieved: list[RetrievedItemModel]
    industries: list[str]


class ClassifyRequest(BaseModel):
    query: str = Field(min_length=1)


class ClassifyResponse(BaseModel):
    industries: list[str]


class GateRequest(BaseModel):
    query: str


class GateResponse(BaseModel):
    relevant: bool


class QueryRequest(BaseModel):
    query: str = Field(min_length=1)
    retriever: Literal["knn", "bm25", "hybrid", "mmr"] = "knn"
    k: int = Field(default=5, ge=1)
    industries: list[str] | None = None
    mmr_lambda: float = Field(default=0.5, ge=0.0, le=1.0)


class QueryResultModel(BaseModel):
    chunk_id: str
    score: float
    rank: int
    industry: str
    text: str


class QueryResponse(BaseModel):
    retriever: str
    results: list[QueryResultModel]
