"""In-memory vector + lexical index with four retrievers.

Dense search is an exhaustive cosine scan over unit-normalized vectors
(the corpus is small enough that approximate structures would only add
nondeterminism). Lexical search is Okapi BM25 over the shared
tokenizer, lowercased. Hybrid fuses both rankings with reciprocal-rank
fusion; MMR re-ranks the dense scan for diversity.
"""

from __future__ import annotations

import json
import struct
import threading
from dataclasses import dataclass
from math import log
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .chunking import Chunk, chunk_from_json, chunk_to_json, tokenize
from .providers.base import DimensionMismatch, LlmProvider, Message, ProviderRequest


class IndexError_(Exception):
    pass


class EmptyIndex(IndexError_):
    pass


RRF_K = 60  # reciprocal-rank fusion constant


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75


@dataclass(frozen=True)
class RetrievalResult:
    chunk_id: str
    score: float
    rank: int  # 1-based
    retriever: str


def _normalize(vec: Sequence[float]) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ValueError("cannot index or query a zero vector")
    return arr / norm


class VectorIndex:
    """Chunk store with dense vectors and BM25 statistics.

    Upserts replace entries by chunk_id. Mutation is serialized with a
    lock; reads take a consistent snapshot of the internal arrays.
    """

    def __init__(self, dimension: int) -> None:
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self._lock = threading.Lock()
        self._ids: list[str] = []
        self._pos: dict[str, int] = {}
        self._chunks: dict[str, Chunk] = {}
        self._matrix = np.zeros((0, dimension), dtype=np.float64)
        self._doc_tokens: dict[str, list[str]] = {}

    def __len__(self) -> int:
        return len(self._ids)

    def chunk(self, chunk_id: str) -> Chunk:
        return self._chunks[chunk_id]

    def upsert(self, chunks: Iterable[Chunk]) -> int:
        """Insert or replace chunks; every chunk must carry an embedding
        of the index dimension. Returns the number touched."""
        staged = list(chunks)
        for c in staged:
            if c.embedding is None:
                raise ValueError(f"chunk {c.chunk_id} has no embedding")
            if len(c.embedding) != self.dimension:
                raise DimensionMismatch(
                    f"chunk {c.chunk_id}: embedding length {len(c.embedding)} != index dimension {self.dimension}"
                )
        with self._lock:
            rows = [self._matrix]
            for c in staged:
                vec = _normalize(c.embedding)
                if c.chunk_id in self._pos:
                    self._matrix[self._pos[c.chunk_id]] = vec
                else:
                    self._pos[c.chunk_id] = len(self._ids)
                    self._ids.append(c.chunk_id)
                    rows.append(vec.reshape(1, -1))
                self._chunks[c.chunk_id] = c
                self._doc_tokens[c.chunk_id] = [t.lower() for t in tokenize(c.text)]
            if len(rows) > 1:
                self._matrix = np.vstack(rows)
        return len(staged)

    # --- filtering --------------------------------------------------------

    def _candidate_positions(self, industries: set[str] | None) -> list[int]:
        if industries is None:
            return list(range(len(self._ids)))
        return [
            i
            for i, cid in enumerate(self._ids)
            if self._chunks[cid].metadata.industry in industries
        ]

    def _require_nonempty(self) -> None:
        if not self._ids:
            raise EmptyIndex("index contains no chunks")

    # --- dense ------------------------------------------------------------

    def knn(self, query_vector: Sequence[float], k: int, industries: set[str] | None = None) -> list[RetrievalResult]:
        """Exhaustive cosine top-k; ties broken toward the smaller chunk_id."""
        self._require_nonempty()
        if k < 1:
            raise ValueError("k must be positive")
        q = _normalize(query_vector)
        if q.shape[0] != self.dimension:
            raise DimensionMismatch(f"query length {q.shape[0]} != index dimension {self.dimension}")
        positions = self._candidate_positions(industries)
        if not positions:
            return []
        sims = self._matrix[positions] @ q
        order = sorted(range(len(positions)), key=lambda i: (-sims[i], self._ids[positions[i]]))
        return [
            RetrievalResult(self._ids[positions[i]], float(sims[i]), rank + 1, "knn")
            for rank, i in enumerate(order[:k])
        ]

    # --- lexical ----------------------------------------------------------

    def bm25(self, query: str, k: int, industries: set[str] | None = None, params: Bm25Params | None = None) -> list[RetrievalResult]:
        """Okapi BM25 with idf = ln(1 + (N - df + 0.5)/(df + 0.5)).

        Chunks that share no term with the query are not returned, so a
        query with no corpus terms yields an empty list.
        """
        self._require_nonempty()
        if k < 1:
            raise ValueError("k must be positive")
        p = params or Bm25Params()
        positions = self._candidate_positions(industries)
        if not positions:
            return []
        docs = [self._doc_tokens[self._ids[i]] for i in positions]
        n_docs = len(docs)
        avg_len = sum(len(d) for d in docs) / n_docs
        if avg_len == 0.0:
            return []
        q_terms = [t.lower() for t in tokenize(query)]
        df: dict[str, int] = {}
        for term in set(q_terms):
            df[term] = sum(1 for d in docs if term in d)
        scores = []
        for i, d in zip(positions, docs):
            score = 0.0
            dl = len(d)
            for term in q_terms:
                if df[term] == 0:
                    continue
                tf = d.count(term)
                if tf == 0:
                    continue
                idf = log(1.0 + (n_docs - df[term] + 0.5) / (df[term] + 0.5))
                score += idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * dl / avg_len))
            if score > 0.0:
                scores.append((score, self._ids[i]))
        scores.sort(key=lambda t: (-t[0], t[1]))
        return [
            RetrievalResult(cid, score, rank + 1, "bm25")
            for rank, (score, cid) in enumerate(scores[:k])
        ]

    # --- fusion -----------------------------------------------------------

    def hybrid(self, query: str, query_vector: Sequence[float], k: int, industries: set[str] | None = None) -> list[RetrievalResult]:
        """Reciprocal-rank fusion of the knn and bm25 top-k lists:
        fused(c) = sum over lists containing c of 1/(60 + rank)."""
        dense = self.knn(query_vector, k, industries)
        lexical = self.bm25(query, k, industries)
        fused = rrf_fuse([dense, lexical])
        return [
            RetrievalResult(r.chunk_id, r.score, r.rank, "hybrid") for r in fused[:k]
        ]

    # --- diversity --------------------------------------------------------

    def mmr(self, query_vector: Sequence[float], k: int, lambda_: float, industries: set[str] | None = None) -> list[RetrievalResult]:
        """Greedy maximal-marginal-relevance selection.

        Objective for a candidate c given selected set S:
        lambda * sim(q, c) - (1 - lambda) * max_{s in S} sim(c, s),
        with the max taken as 0 for the first pick. lambda = 1 reproduces
        the knn ordering exactly, ties included.
        """
        self._require_nonempty()
        if not 0.0 <= lambda_ <= 1.0:
            raise ValueError("lambda must be in [0, 1]")
        if k < 1:
            raise ValueError("k must be positive")
        q = _normalize(query_vector)
        if q.shape[0] != self.dimension:
            raise DimensionMismatch(f"query length {q.shape[0]} != index dimension {self.dimension}")
        positions = self._candidate_positions(industries)
        if not positions:
            return []
        sub = self._matrix[positions]
        sims = sub @ q
        remaining = list(range(len(positions)))
        selected: list[int] = []
        results: list[RetrievalResult] = []
        while remaining and len(selected) < k:
            best_i = None
            best_obj = None
            for i in remaining:
                redundancy = max((float(sub[i] @ sub[j]) for j in selected), default=0.0)
                obj = lambda_ * float(sims[i]) - (1.0 - lambda_) * redundancy
                key = (-obj, self._ids[positions[i]])
                if best_obj is None or key < best_obj:
                    best_obj = key
                    best_i = i
            assert best_i is not None
            remaining.remove(best_i)
            selected.append(best_i)
            results.append(
                RetrievalResult(self._ids[positions[best_i]], -best_obj[0], len(selected), "mmr")
            )
        return results

    # --- persistence ------------------------------------------------------

    def save(self, out_dir: str | Path) -> None:
        """Two files: meta.jsonl (chunk records, no embeddings) and
        vectors.bin (8-byte header of <dimension, count> as little-endian
        uint32, then count*dimension little-endian float32)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "meta.jsonl", "w", encoding="utf-8") as fh:
            for cid in self._ids:
                fh.write(json.dumps(chunk_to_json(self._chunks[cid]), sort_keys=True, ensure_ascii=False) + "\n")
        with open(out / "vectors.bin", "wb") as fh:
            fh.write(struct.pack("<II", self.dimension, len(self._ids)))
            fh.write(self._matrix.astype("<f4").tobytes(order="C"))

    @classmethod
    def load(cls, in_dir: str | Path) -> "VectorIndex":
        base = Path(in_dir)
        with open(base / "vectors.bin", "rb") as fh:
            header = fh.read(8)
            if len(header) != 8:
                raise IndexError_("vector file header truncated")
            dimension, count = struct.unpack("<II", header)
            payload = fh.read()
        expected = dimension * count * 4
        if len(payload) != expected:
            raise IndexError_(f"vector payload is {len(payload)} bytes, expected {expected}")
        matrix = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(count, dimension)
        index = cls(dimension)
        with open(base / "meta.jsonl", "r", encoding="utf-8") as fh:
            rows = [chunk_from_json(json.loads(line)) for line in fh if line.strip()]
        if len(rows) != count:
            raise IndexError_(f"meta rows ({len(rows)}) disagree with vector count ({count})")
        for row, vec in zip(rows, matrix):
            row.embedding = list(vec)
        index.upsert(rows)
        return index


def rrf_fuse(ranked_lists: Sequence[Sequence[RetrievalResult]], k_const: int = RRF_K) -> list[RetrievalResult]:
    """Reciprocal-rank fusion across any number of ranked lists.

    Fused score of an item is the sum of 1/(k_const + rank) over every
    list it appears in; ties break toward the smaller chunk_id.
    """
    fused: dict[str, float] = {}
    for results in ranked_lists:
        for r in results:
            fused[r.chunk_id] = fused.get(r.chunk_id, 0.0) + 1.0 / (k_const + r.rank)
    ordered = sorted(fused.items(), key=lambda kv: (-kv[1], kv[0]))
    return [
        RetrievalResult(cid, score, rank + 1, "rrf")
        for rank, (cid, score) in enumerate(ordered)
    ]


# --- query transforms ---------------------------------------------------------

HYDE_PROMPT = (
    "Write a short factual passage, in the style of an industry reporting "
    "standard, that would directly answer the question below. Write the "
    "passage only, no preamble.\n\nQuestion: {query}"
)

MULTI_QUERY_PROMPT = (
    "Rewrite the question below as {n} differently-phrased search queries "
    "that keep its meaning. Return JSON.\n\nQuestion: {query}"
)


def multi_query_schema(n: int) -> dict:
    return {
        "type": "object",
        "properties": {
            "variants": {
                "type": "array",
                "items": {"type": "string"},
                "minItems": n,
                "maxItems": n,
            }
        },
        "required": ["variants"],
    }


def hyde_transform(provider: LlmProvider, model_id: str, query: str, temperature: float = 0.0) -> str:
    """Hypothetical-answer expansion: embed a drafted answer passage
    instead of the raw query."""
    if not query.strip():
        raise ValueError("query must be non-empty")
    req = ProviderRequest(
        model_id=model_id,
        messages=(Message("user", HYDE_PROMPT.format(query=query)),),
        temperature=temperature,
    )
    return provider.complete(req).text


def multi_query_search(
    provider: LlmProvider,
    model_id: str,
    index: VectorIndex,
    query: str,
    n_variants: int,
    k: int,
    industries: set[str] | None = None,
    temperature: float = 0.0,
) -> list[RetrievalResult]:
    """Generate n_variants rewordings, run knn for each, fuse with RRF."""
    if n_variants < 2:
        raise ValueError("multi-query needs at least 2 variants")
    if not query.strip():
        raise ValueError("query must be non-empty")
    req = ProviderRequest(
        model_id=model_id,
        messages=(Message("user", MULTI_QUERY_PROMPT.format(n=n_variants, query=query)),),
        temperature=temperature,
        output_schema=multi_query_schema(n_variants),
    )
    variants = provider.complete(req).structured["variants"]
    vectors = provider.embed(variants)
    lists = [index.knn(vec, k, industries) for vec in vectors]
    fused = rrf_fuse(lists)
    return [
        RetrievalResult(r.chunk_id, r.score, r.rank, "multi_query") for r in fused[:k]
    ]


def build_index(provider: LlmProvider, chunks: Sequence[Chunk], batch_size: int = 64) -> VectorIndex:
    """Embed chunk texts with the provider and index them."""
    index = VectorIndex(provider.dimension)
    staged = []
    for i in range(0, len(chunks), batch_size):
        batch = chunks[i : i + batch_size]
        vectors = provider.embed([c.text for c in batch])
        for c, vec in zip(batch, vectors):
            c.embedding = list(vec)
            staged.append(c)
    index.upsert(staged)
    return index
