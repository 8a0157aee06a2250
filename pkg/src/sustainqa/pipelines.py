"""Question-answering pipelines over the indexed corpus.

All three variants share a domain-relevance gate that runs before any
retrieval or generation: off-domain queries get a refusal and never
reach a generation call. The baseline variant retrieves over the whole
index with a configurable retriever and optional query transform; the
custom variant classifies the query into industries and restricts a
knn top-5 over markdown chunks to them; the fully model-driven variant
lets the model select verbatim snippets from the full documents of the
classified industries (non-verbatim snippets are dropped and logged).
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .classifier import llm_classify
from .generation import QAPair
from .indexing import RetrievalResult, VectorIndex, hyde_transform, multi_query_search
from .ingest import IndustryDoc
from .providers.base import LlmProvider, Message, ProviderRequest

logger = logging.getLogger(__name__)

VARIANTS = ("baseline", "custom_rag", "llm_pipeline")
RETRIEVERS = ("knn", "bm25", "hybrid", "mmr")
TRANSFORMS = ("none", "hyde", "multi_query")

REFUSAL_TEXT = (
    "This assistant answers questions about industry sustainability reporting "
    "standards; the question falls outside that scope."
)


class PipelineError(Exception):
    pass


class AllSnippetsRejected(PipelineError):
    """Every model-selected snippet failed verbatim verification."""


@dataclass(frozen=True)
class ModelRoles:
    generator: str = "generator-model"
    judge: str = "judge-model"
    classifier: str = "classifier-model"
    selector: str = "selector-model"
    extractor: str = "extractor-model"


@dataclass
class PipelineConfig:
    variant: str = "custom_rag"
    retriever: str = "knn"
    k: int = 5
    transform: str = "none"
    mmr_lambda: float = 0.5
    n_variants: int = 3
    temperature: float = 0.5

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.retriever not in RETRIEVERS:
            raise ValueError(f"retriever must be one of {RETRIEVERS}")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"transform must be one of {TRANSFORMS}")
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.variant == "custom_rag":
            # the custom pipeline is pinned to knn top-5 over markdown chunks
            self.retriever = "knn"
            self.k = 5
            self.transform = "none"


@dataclass(frozen=True)
class RetrievedItem:
    ref: str  # chunk_id, or industry:snippet index for the model-driven variant
    industry: str
    score: float | None


@dataclass
class Answer:
    text: str
    gated: bool
    pipeline: str
    retrieved: tuple[RetrievedItem, ...] = ()
    industries: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "text": self.text,
            "gated": self.gated,
            "pipeline": self.pipeline,
            "retrieved": [
                {"ref": r.ref, "industry": r.industry, "score": r.score} for r in self.retrieved
            ],
            "industries": list(self.industries),
        }


GATE_PROMPT = (
    "Decide whether the question below is on-domain for an assistant that covers "
    "industry sustainability reporting standards: their industries, disclosure "
    "topics, metrics, categories, units of measure, and codes. Return JSON with "
    "relevant true or false.\n\nQuestion:\n{query}"
)

GATE_SCHEMA = {
    "type": "object",
    "properties": {"relevant": {"type": "boolean"}},
    "required": ["relevant"],
}

RAG_ANSWER_PROMPT = (
    "Answer the question using only the context excerpts below. Quote units, "
    "codes, and metric names exactly as they appear. If the context does not "
    "contain the answer, say that it does not. For a multiple-choice question, "
    "reply with the correct option letter.\n\n"
    "Context:\n{context}\n\nQuestion:\n{query}"
)

SELECTOR_PROMPT = (
    "From the industry standard below, copy up to {max_snippets} passages, "
    "verbatim and character-exact, that help answer the question. Copy only text "
    "that actually appears in the document; do not paraphrase. Return JSON with "
    "the passages in snippets (an empty list if nothing helps).\n\n"
    "Question:\n{query}\n\n"
    "## industry: {industry}\n\n{document}"
)


def selector_schema(max_snippets: int) -> dict:
    return {
        "type": "object",
        "properties": {
            "snippets": {
                "type": "array",
                "items": {"type": "string", "minLength": 1},
                "minItems": 0,
                "maxItems": max_snippets,
            }
        },
        "required": ["snippets"],
    }


class AnswerEngine:
    """Holds the wiring one deployment needs to answer queries."""

    def __init__(
        self,
        provider: LlmProvider,
        roles: ModelRoles,
        index: VectorIndex | None,
        docs: dict[str, IndustryDoc],
        config: PipelineConfig | None = None,
        max_snippets: int = 8,
    ) -> None:
        self.provider = provider
        self.roles = roles
        self.index = index
        self.docs = docs
        self.config = config or PipelineConfig()
        self.max_snippets = max_snippets
        self.hallucination_log: list[dict] = []

    # --- gate -------------------------------------------------------------

    def relevance_gate(self, query: str) -> bool:
        """True when the query is on-domain. Empty or blank queries are
        off-domain without spending a provider call."""
        if not query.strip():
            return False
        req = ProviderRequest(
            model_id=self.roles.judge,
            messages=(Message("user", GATE_PROMPT.format(query=query)),),
            temperature=0.0,
            output_schema=GATE_SCHEMA,
        )
        return bool(self.provider.complete(req).structured["relevant"])

    # --- shared helpers -----------------------------------------------------

    def _generate(self, query: str, context: str, temperature: float) -> str:
        req = ProviderRequest(
            model_id=self.roles.generator,
            messages=(Message("user", RAG_ANSWER_PROMPT.format(context=context, query=query)),),
            temperature=temperature,
            max_output=1024,
        )
        return self.provider.complete(req).text

    def _retrieve(self, query: str, cfg: PipelineConfig, industries: set[str] | None) -> list[RetrievalResult]:
        if self.index is None:
            raise PipelineError("this engine was built without an index")
        if cfg.transform == "multi_query":
            return multi_query_search(
                self.provider, self.roles.generator, self.index, query, cfg.n_variants, cfg.k, industries
            )
        text_query = query
        if cfg.transform == "hyde":
            text_query = hyde_transform(self.provider, self.roles.generator, query)
        if cfg.retriever == "bm25":
            return self.index.bm25(text_query, cfg.k, industries)
        vector = self.provider.embed([text_query])[0]
        if cfg.retriever == "knn":
            return self.index.knn(vector, cfg.k, industries)
        if cfg.retriever == "hybrid":
            return self.index.hybrid(text_query, vector, cfg.k, industries)
        return self.index.mmr(vector, cfg.k, cfg.mmr_lambda, industries)

    def _context_from(self, results: Sequence[RetrievalResult]) -> tuple[str, tuple[RetrievedItem, ...]]:
        assert self.index is not None
        blocks = []
        items = []
        for r in results:
            chunk = self.index.chunk(r.chunk_id)
            blocks.append(f"[{chunk.metadata.industry}] {chunk.text}")
            items.append(RetrievedItem(r.chunk_id, chunk.metadata.industry, r.score))
        return "\n\n".join(blocks), tuple(items)

    # --- variants ------------------------------------------------------------

    def answer(self, query: str, cfg: PipelineConfig | None = None) -> Answer:
        cfg = cfg or self.config
        if cfg.variant == "baseline":
            return self.answer_baseline(query, cfg)
        if cfg.variant == "custom_rag":
            return self.answer_custom_rag(query, cfg)
        return self.answer_llm_pipeline(query, cfg)

    def answer_baseline(self, query: str, cfg: PipelineConfig | None = None) -> Answer:
        """Gate, optional transform, whole-index retrieval, generation."""
        cfg = cfg or self.config
        if not self.relevance_gate(query):
            return Answer(REFUSAL_TEXT, gated=True, pipeline="baseline")
        results = self._retrieve(query, cfg, industries=None)
        context, items = self._context_from(results)
        text = self._generate(query, context, cfg.temperature)
        return Answer(text, gated=False, pipeline="baseline", retrieved=items)

    def answer_custom_rag(self, query: str, cfg: PipelineConfig | None = None) -> Answer:
        """Gate, industry classification, industry-filtered knn top-5 over
        markdown chunks, generation. Every retrieved chunk belongs to a
        predicted industry."""
        cfg = cfg or self.config
        if not self.relevance_gate(query):
            return Answer(REFUSAL_TEXT, gated=True, pipeline="custom_rag")
        industries = llm_classify(
            self.provider, self.roles.classifier, query, self._descriptions()
        )
        vector = self.provider.embed([query])[0]
        assert self.index is not None
        results = self.index.knn(vector, 5, set(industries))
        context, items = self._context_from(results)
        text = self._generate(query, context, cfg.temperature)
        return Answer(text, gated=False, pipeline="custom_rag", retrieved=items, industries=industries)

    def answer_llm_pipeline(self, query: str, cfg: PipelineConfig | None = None) -> Answer:
        """Gate, classification, model-driven snippet selection from the
        full documents, verbatim verification, generation.

        Snippets that are not character-exact substrings of their source
        document are dropped and logged as hallucinations; if nothing
        survives, AllSnippetsRejected is raised.
        """
        cfg = cfg or self.config
        if not self.relevance_gate(query):
            return Answer(REFUSAL_TEXT, gated=True, pipeline="llm_pipeline")
        industries = llm_classify(
            self.provider, self.roles.classifier, query, self._descriptions()
        )
        kept: list[tuple[str, str]] = []
        items: list[RetrievedItem] = []
        for industry in industries:
            doc = self.docs[industry]
            req = ProviderRequest(
                model_id=self.roles.selector,
                messages=(
                    Message(
                        "user",
                        SELECTOR_PROMPT.format(
                            max_snippets=self.max_snippets,
                            query=query,
                            industry=industry,
                            document=doc.markdown,
                        ),
                    ),
                ),
                temperature=0.0,
                output_schema=selector_schema(self.max_snippets),
                max_output=4096,
            )
            snippets = self.provider.complete(req).structured["snippets"]
            for i, snippet in enumerate(snippets):
                if snippet in doc.markdown:
                    kept.append((industry, snippet))
                    items.append(RetrievedItem(f"{industry}:snippet:{i}", industry, None))
                else:
                    event = {"industry": industry, "snippet": snippet, "query": query}
                    self.hallucination_log.append(event)
                    logger.warning("dropping non-verbatim snippet for %s: %.80r", industry, snippet)
        if not kept:
            raise AllSnippetsRejected(f"no verbatim snippets survived for query {query!r}")
        context = "\n\n".join(f"[{ind}] {snippet}" for ind, snippet in kept)
        text = self._generate(query, context, cfg.temperature)
        return Answer(text, gated=False, pipeline="llm_pipeline", retrieved=tuple(items), industries=industries)

    def _descriptions(self) -> dict[str, str]:
        from .classifier import industry_descriptions

        if not self.docs:
            raise PipelineError("this engine was built without documents")
        return industry_descriptions(list(self.docs.values()))


# --- fine-tuning export --------------------------------------------------------------

_FT_PROMPT_RE = re.compile(
    r"\A(?P<question>.*)\n\nA\) (?P<A>.*)\nB\) (?P<B>.*)\nC\) (?P<C>.*)\nD\) (?P<D>.*)\nE\) (?P<E>.*)\n\nAnswer:\Z",
    re.DOTALL,
)


def render_finetune_prompt(qa: QAPair) -> str:
    options = qa.option_map()
    lines = [qa.question, ""]
    for letter in "ABCDE":
        lines.append(f"{letter}) {options[letter]}")
    lines.append("")
    lines.append("Answer:")
    return "\n".join(lines)


def render_finetune_completion(qa: QAPair) -> str:
    return f" {qa.answer}) {qa.answer_text()}"


def parse_finetune_record(record: dict) -> tuple[str, dict[str, str], str]:
    """Invert the export format: (question, options, correct letter)."""
    m = _FT_PROMPT_RE.match(record["prompt"])
    if not m:
        raise ValueError("prompt does not match the export format")
    completion = record["completion"]
    letter = completion.strip()[0]
    options = {l: m.group(l) for l in "ABCDE"}
    return m.group("question"), options, letter


def export_finetune_dataset(pairs: Sequence[QAPair], path: str | Path) -> tuple[int, list[str]]:
    """Write mcq pairs as JSONL prompt/completion records, ordered by
    qa_id. Free-text pairs cannot become letter-completion examples, so
    they are skipped with a warning; returns (written, skipped qa_ids)."""
    skipped = []
    written = 0
    with open(path, "w", encoding="utf-8") as fh:
        for qa in sorted(pairs, key=lambda q: q.qa_id):
            if qa.format != "mcq":
                skipped.append(qa.qa_id)
                logger.warning("skipping free_text question %s in fine-tune export", qa.qa_id)
                continue
            record = {
                "prompt": render_finetune_prompt(qa),
                "completion": render_finetune_completion(qa),
            }
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
            written += 1
    return written, skipped


def load_finetune_dataset(path: str | Path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows
