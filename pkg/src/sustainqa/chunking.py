"""Deterministic document chunking.

Seven strategies share one whitespace/punctuation tokenizer and one
Chunk record. Every chunk carries both its token span and its character
span in the source markdown, chunk text is always the exact substring
for that character span, and the character spans of a chunked document
cover every character (partitioning it for the non-overlapping
strategies).
"""

from __future__ import annotations

import json
import re
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .ingest import IndustryDoc


class ChunkingError(Exception):
    pass


class EmptyDocument(ChunkingError):
    pass


class MissingPageSpans(ChunkingError):
    pass


_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)

STRATEGIES = ("fixed256", "fixed512", "fixed1024", "page", "window", "semantic", "markdown")


def tokenize(text: str) -> list[str]:
    """Whitespace-split tokens with punctuation detached from words."""
    return _TOKEN_RE.findall(text)


def token_spans(text: str) -> list[tuple[int, int]]:
    return [(m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def tokenize_with_separators(text: str) -> tuple[list[str], list[str]]:
    """Tokens plus the n+1 separator strings around them.

    ``seps[0] + t[0] + seps[1] + ... + t[-1] + seps[-1]`` reproduces the
    input exactly.
    """
    tokens: list[str] = []
    seps: list[str] = []
    last = 0
    for m in _TOKEN_RE.finditer(text):
        seps.append(text[last : m.start()])
        tokens.append(m.group())
        last = m.end()
    seps.append(text[last:])
    return tokens, seps


@dataclass(frozen=True)
class ChunkMetadata:
    page: int | tuple[int, int]
    report: str
    industry: str
    kind: str = "free_text"  # free_text | table


@dataclass
class Chunk:
    chunk_id: str
    doc_id: str
    text: str
    token_span: tuple[int, int]  # [start, end) in document token indices
    char_span: tuple[int, int]  # [start, end) in document characters
    metadata: ChunkMetadata
    embedding: list[float] | None = None

    def __post_init__(self) -> None:
        if self.token_span[0] >= self.token_span[1]:
            raise ChunkingError(f"chunk {self.chunk_id} has an empty token span")
        if not self.text:
            raise ChunkingError(f"chunk {self.chunk_id} has empty text")


@dataclass(frozen=True)
class ChunkingSpec:
    """Strategy selector plus the knobs each strategy reads."""

    strategy: str = "markdown"
    window_size: int = 512
    window_overlap_fraction: float = 0.10
    semantic_threshold: float = 0.5
    markdown_heading_level: int = 2

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ChunkingError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not 0.0 <= self.window_overlap_fraction < 0.5:
            raise ChunkingError("window overlap fraction must be in [0, 0.5)")
        if not 0.0 <= self.semantic_threshold <= 1.0:
            raise ChunkingError("semantic threshold must be in [0, 1]")
        if self.markdown_heading_level < 1:
            raise ChunkingError("heading level must be >= 1")


def round_half_up(x: float) -> int:
    import math

    return int(math.floor(x + 0.5))


def window_stride(size: int, overlap_fraction: float) -> tuple[int, int]:
    """(stride, shared token count) for a rolling window."""
    overlap = round_half_up(size * overlap_fraction)
    return size - overlap, overlap


def _page_of(doc: IndustryDoc, start: int, end: int) -> int | tuple[int, int]:
    pages = doc.pages_for_range(start, end)
    if len(pages) == 1:
        return pages[0]
    return (pages[0], pages[-1])


def _make_chunk(doc: IndustryDoc, strategy: str, index: int, token_span: tuple[int, int], char_span: tuple[int, int], kind: str = "free_text") -> Chunk:
    start, end = char_span
    return Chunk(
        chunk_id=f"{doc.industry_id}:{strategy}:{index:04d}",
        doc_id=doc.industry_id,
        text=doc.markdown[start:end],
        token_span=token_span,
        char_span=char_span,
        metadata=ChunkMetadata(
            page=_page_of(doc, start, end),
            report=doc.title,
            industry=doc.industry_id,
            kind=kind,
        ),
    )


def _spans_or_raise(doc: IndustryDoc) -> list[tuple[int, int]]:
    spans = token_spans(doc.markdown)
    if not spans:
        raise EmptyDocument(f"document {doc.industry_id} has no tokens")
    return spans


def chunk_fixed(doc: IndustryDoc, size: int, strategy_name: str | None = None) -> list[Chunk]:
    """Consecutive non-overlapping chunks of exactly ``size`` tokens, with
    one shorter final chunk when the length is not a multiple."""
    if size < 1:
        raise ChunkingError("chunk size must be positive")
    spans = _spans_or_raise(doc)
    name = strategy_name or f"fixed{size}"
    n = len(spans)
    chunks: list[Chunk] = []
    char_cursor = 0
    for idx, start in enumerate(range(0, n, size)):
        end = min(start + size, n)
        char_end = spans[end][0] if end < n else len(doc.markdown)
        chunks.append(_make_chunk(doc, name, idx, (start, end), (char_cursor, char_end)))
        char_cursor = char_end
    return chunks


def chunk_window(doc: IndustryDoc, size: int, overlap_fraction: float) -> list[Chunk]:
    """Rolling window: consecutive chunks share round_half_up(size * f)
    tokens; with f < 0.5 an interior token lands in at most two chunks."""
    if size < 2:
        raise ChunkingError("window size must be at least 2")
    if not 0.0 <= overlap_fraction < 0.5:
        raise ChunkingError("window overlap fraction must be in [0, 0.5)")
    spans = _spans_or_raise(doc)
    stride, _ = window_stride(size, overlap_fraction)
    n = len(spans)
    chunks: list[Chunk] = []
    pos = 0
    idx = 0
    prev_end = 0
    while True:
        end = min(pos + size, n)
        # never leave a gap after the previous chunk, even at zero overlap
        char_start = 0 if idx == 0 else min(spans[pos][0], prev_end)
        char_end = len(doc.markdown) if end == n else spans[end - 1][1]
        chunks.append(_make_chunk(doc, "window", idx, (pos, end), (char_start, char_end)))
        if end == n:
            break
        prev_end = char_end
        pos += stride
        idx += 1
    return chunks


def chunk_page(doc: IndustryDoc) -> list[Chunk]:
    """One chunk per page; chunk text is exactly the page's span text.
    Pages that contributed no tokens are skipped."""
    if not doc.page_spans:
        raise MissingPageSpans(f"document {doc.industry_id} carries no page spans")
    spans = _spans_or_raise(doc)
    starts = [s for s, _ in spans]
    chunks: list[Chunk] = []
    idx = 0
    for page in sorted(doc.page_spans):
        cs, ce = doc.page_spans[page]
        t0 = bisect_left(starts, cs)
        t1 = bisect_left(starts, ce)
        if t1 <= t0:
            continue  # page contributed no tokens
        chunks.append(_make_chunk(doc, "page", idx, (t0, t1), (cs, ce)))
        idx += 1
    if not chunks:
        raise EmptyDocument(f"document {doc.industry_id} has no tokens on any page")
    return chunks


_SENTENCE_END_RE = re.compile(r"(?<=[.!?])\s+|\n{2,}")


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Sentence character spans: cut after ./!/? followed by whitespace,
    and at blank lines."""
    cuts = [0]
    for m in _SENTENCE_END_RE.finditer(text):
        cuts.append(m.end())
    cuts.append(len(text))
    spans = []
    for a, b in zip(cuts, cuts[1:]):
        if text[a:b].strip():
            spans.append((a, b))
    return spans


def chunk_semantic(
    doc: IndustryDoc,
    threshold: float,
    embed_fn: Callable[[Sequence[str]], list[list[float]]],
) -> list[Chunk]:
    """Split at sentence boundaries where adjacent three-sentence windows
    drift apart in embedding space.

    The window ending at sentence i is compared with the window starting
    at sentence i+1; a boundary fires when their cosine similarity
    (clamped at 0) drops below ``threshold``. Threshold 0 therefore
    never splits.
    """
    spans = _spans_or_raise(doc)
    text = doc.markdown
    sents = split_sentences(text)
    if not sents:
        raise EmptyDocument(f"document {doc.industry_id} has no sentences")

    boundaries: list[int] = []  # boundary after sentence index i
    if len(sents) > 1 and threshold > 0.0:
        left_windows = []
        right_windows = []
        for i in range(len(sents) - 1):
            ls = sents[max(0, i - 2) : i + 1]
            rs = sents[i + 1 : i + 4]
            left_windows.append(" ".join(text[a:b].strip() for a, b in ls))
            right_windows.append(" ".join(text[a:b].strip() for a, b in rs))
        vectors = embed_fn(left_windows + right_windows)
        half = len(left_windows)
        for i in range(half):
            lv = np.asarray(vectors[i])
            rv = np.asarray(vectors[half + i])
            denom = float(np.linalg.norm(lv) * np.linalg.norm(rv))
            cosine = float(np.dot(lv, rv) / denom) if denom else 0.0
            similarity = max(0.0, cosine)
            if similarity < threshold:
                boundaries.append(i)

    groups: list[tuple[int, int]] = []  # sentence index ranges, inclusive-exclusive
    start = 0
    for b in boundaries:
        groups.append((start, b + 1))
        start = b + 1
    groups.append((start, len(sents)))

    starts = [s for s, _ in spans]
    chunks: list[Chunk] = []
    char_cursor = 0
    for _, g1 in groups:
        char_end = len(text) if g1 == len(sents) else sents[g1][0]
        t0 = bisect_left(starts, char_cursor)
        t1 = bisect_left(starts, char_end)
        if t1 <= t0:
            continue
        chunks.append(_make_chunk(doc, "semantic", len(chunks), (t0, t1), (char_cursor, char_end)))
        char_cursor = char_end
    if chunks:
        last = chunks[-1]
        if last.char_span[1] != len(text):
            # trailing sentence group had no tokens; extend the last chunk
            chunks[-1] = _make_chunk(doc, "semantic", len(chunks) - 1, last.token_span, (last.char_span[0], len(text)))
    return chunks


_HEADING_RE = re.compile(r"^(#{1,6})\s+\S", re.MULTILINE)


def _table_blocks(text: str) -> list[tuple[int, int]]:
    """Character spans of maximal runs of pipe-table lines."""
    blocks: list[tuple[int, int]] = []
    offset = 0
    current: int | None = None
    for line in text.splitlines(keepends=True):
        is_row = line.strip().startswith("|")
        if is_row and current is None:
            current = offset
        if not is_row and current is not None:
            blocks.append((current, offset))
            current = None
        offset += len(line)
    if current is not None:
        blocks.append((current, offset))
    return blocks


def chunk_markdown(doc: IndustryDoc, heading_level: int) -> list[Chunk]:
    """Section-wise chunking: cut at headings of the given level or above,
    carve out each table as its own chunk (kind=table), and emit each
    maximal prose run as one chunk. Table rows never split."""
    spans = _spans_or_raise(doc)
    text = doc.markdown
    cuts = {0, len(text)}
    for m in _HEADING_RE.finditer(text):
        if len(m.group(1)) <= heading_level:
            cuts.add(m.start())
    tables = _table_blocks(text)
    for a, b in tables:
        cuts.add(a)
        cuts.add(b)
    ordered = sorted(cuts)

    table_starts = {a for a, _ in tables}
    segments: list[tuple[int, int, str]] = []
    for a, b in zip(ordered, ordered[1:]):
        if a == b:
            continue
        kind = "table" if a in table_starts else "free_text"
        segments.append((a, b, kind))

    # merge whitespace-only prose segments into the preceding segment so
    # character coverage stays a partition
    merged: list[tuple[int, int, str]] = []
    for a, b, kind in segments:
        if kind == "free_text" and not text[a:b].strip() and merged:
            pa, pb, pk = merged[-1]
            merged[-1] = (pa, b, pk)
        else:
            merged.append((a, b, kind))

    starts = [s for s, _ in spans]
    chunks: list[Chunk] = []
    idx = 0
    pending_start: int | None = None
    for a, b, kind in merged:
        t0 = bisect_left(starts, a)
        t1 = bisect_left(starts, b)
        if t1 <= t0:
            if pending_start is None:
                pending_start = a
            continue
        if pending_start is not None:
            a = pending_start
            pending_start = None
            t0 = bisect_left(starts, a)
        chunks.append(_make_chunk(doc, "markdown", idx, (t0, t1), (a, b), kind=kind))
        idx += 1
    if pending_start is not None and chunks:
        last = chunks[-1]
        chunks[-1] = _make_chunk(
            doc, "markdown", len(chunks) - 1, last.token_span, (last.char_span[0], len(text)), kind=last.metadata.kind
        )
    if not chunks:
        raise EmptyDocument(f"document {doc.industry_id} has no tokens")
    return chunks


def chunk_document(
    doc: IndustryDoc,
    spec: ChunkingSpec,
    embed_fn: Callable[[Sequence[str]], list[list[float]]] | None = None,
) -> list[Chunk]:
    """Dispatch on ``spec.strategy``. Identical (doc, spec) inputs give
    byte-identical chunk lists."""
    if spec.strategy == "fixed256":
        return chunk_fixed(doc, 256)
    if spec.strategy == "fixed512":
        return chunk_fixed(doc, 512)
    if spec.strategy == "fixed1024":
        return chunk_fixed(doc, 1024)
    if spec.strategy == "page":
        return chunk_page(doc)
    if spec.strategy == "window":
        return chunk_window(doc, spec.window_size, spec.window_overlap_fraction)
    if spec.strategy == "semantic":
        if embed_fn is None:
            raise ChunkingError("semantic chunking needs an embedding function")
        return chunk_semantic(doc, spec.semantic_threshold, embed_fn)
    if spec.strategy == "markdown":
        return chunk_markdown(doc, spec.markdown_heading_level)
    raise ChunkingError(f"unknown strategy {spec.strategy!r}")


# --- serialization ----------------------------------------------------------

def chunk_to_json(chunk: Chunk) -> dict:
    page = chunk.metadata.page
    return {
        "chunk_id": chunk.chunk_id,
        "doc_id": chunk.doc_id,
        "text": chunk.text,
        "token_span": list(chunk.token_span),
        "char_span": list(chunk.char_span),
        "metadata": {
            "page": list(page) if isinstance(page, tuple) else page,
            "report": chunk.metadata.report,
            "industry": chunk.metadata.industry,
            "kind": chunk.metadata.kind,
        },
    }


def chunk_from_json(data: dict) -> Chunk:
    meta = data["metadata"]
    page = meta["page"]
    return Chunk(
        chunk_id=data["chunk_id"],
        doc_id=data["doc_id"],
        text=data["text"],
        token_span=tuple(data["token_span"]),
        char_span=tuple(data["char_span"]),
        metadata=ChunkMetadata(
            page=tuple(page) if isinstance(page, list) else page,
            report=meta["report"],
            industry=meta["industry"],
            kind=meta["kind"],
        ),
    )


def dump_chunks(chunks: Iterable[Chunk], path: str | Path) -> None:
    """Write chunks as JSONL; embeddings are never persisted here."""
    with open(path, "w", encoding="utf-8") as fh:
        for chunk in chunks:
            fh.write(json.dumps(chunk_to_json(chunk), sort_keys=True, ensure_ascii=False) + "\n")


def load_chunks(path: str | Path) -> list[Chunk]:
    chunks = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                chunks.append(chunk_from_json(json.loads(line)))
    return chunks
