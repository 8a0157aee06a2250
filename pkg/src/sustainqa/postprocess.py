"""Post-generation gates: one-shot targeted improvement, industry-mention
generalisation with a scope-checked rewrite, the single-best-answer audit
for multiple choice, and embedding-based near-duplicate filtering.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .evaluation import EvalScores
from .generation import GateThresholds, OPTION_LETTERS, QAPair
from .providers.base import LlmProvider, Message, ProviderRequest


class RewriteScopeViolation(Exception):
    """The generalisation rewrite changed more than the industry mention
    (or failed to remove it); the original question is kept and flagged."""


@dataclass
class ImprovementResult:
    qa: QAPair
    outcome: str  # improved | discarded_still_failing | discarded_new_failure | discarded_multi_weak
    weak_metric: str | None = None
    before: EvalScores | None = None
    after: EvalScores | None = None


@dataclass
class SbaResult:
    passed: bool
    correct_options: tuple[str, ...]
    reason: str  # ok | zero_correct | wrong_single | multiple_correct


IMPROVE_FOCUS = {
    "faithfulness": (
        "Rephrase it so every premise is stated in the source snippets; remove any "
        "assumption the snippets do not support."
    ),
    "relevance": (
        "Rephrase it to match its declared scope: it must genuinely need the listed "
        "industries and the declared number of lookups."
    ),
    "specificity": (
        "Rephrase it to stand alone: name the standard or industry, the disclosure "
        "topic, and the exact metric, unit, or code it asks about."
    ),
}

IMPROVE_PROMPT = (
    "Improve the assessment question below by strengthening its {metric}. {focus}\n"
    "Do not change what the question is fundamentally asking, its answer, or (for "
    "multiple choice) its options. Return JSON with the improved question text only.\n\n"
    "Declared scope: span {span}, hops {hops}, industries {industries}.\n\n"
    "Question:\n{question}\n\n"
    "Reference snippets:\n{snippets}"
)

GENERALISE_PROMPT = (
    "The question below names a specific industry. Rewrite it so the industry "
    "reference becomes a generic description of the activity, and change nothing "
    "else: every other word must stay exactly as it is.\n"
    "Examples of the substitution:\n"
    "- 'the Coal Operations industry' becomes 'fossil fuel operations'\n"
    "- 'the Airlines standard' becomes 'the standard for passenger air transport'\n"
    "- 'Apparel, Accessories and Footwear companies' becomes 'companies making "
    "clothing and related goods'\n"
    "- 'the Car Rental and Leasing industry' becomes 'businesses that rent out "
    "vehicles'\n"
    "Return JSON with the rewritten question only.\n\n"
    "Question:\n{question}"
)

SBA_PROMPT = (
    "Audit this multiple-choice question. Using only the reference snippets, list "
    "every option letter that would be a fully correct answer. List all of them if "
    "several are correct, and return an empty list if none are. Return JSON.\n\n"
    "Question:\n{question}\n\n"
    "Reference snippets:\n{snippets}"
)

QUESTION_SCHEMA = {
    "type": "object",
    "properties": {"question": {"type": "string", "minLength": 1}},
    "required": ["question"],
}

SBA_SCHEMA = {
    "type": "object",
    "properties": {
        "correct_options": {
            "type": "array",
            "items": {"type": "string", "enum": list(OPTION_LETTERS)},
            "minItems": 0,
            "maxItems": 5,
        }
    },
    "required": ["correct_options"],
}


class PostProcessor:
    """Provider-backed implementation of the post-generation gates."""

    def __init__(
        self,
        provider: LlmProvider,
        model_id: str,
        evaluate_fn: Callable[[QAPair], EvalScores],
        thresholds: GateThresholds | None = None,
        industry_names: dict[str, str] | None = None,
        temperature: float = 0.0,
    ) -> None:
        self.provider = provider
        self.model_id = model_id
        self.evaluate_fn = evaluate_fn
        self.thresholds = thresholds or GateThresholds()
        self.industry_names = industry_names or {}
        self.temperature = temperature

    def _ask(self, prompt: str, schema: dict) -> dict:
        req = ProviderRequest(
            model_id=self.model_id,
            messages=(Message("user", prompt),),
            temperature=self.temperature,
            output_schema=schema,
        )
        return self.provider.complete(req).structured

    # --- improvement ------------------------------------------------------

    def weak_metrics(self, scores: EvalScores, span: str) -> list[str]:
        """Names of the judged metrics sitting below the span threshold."""
        if scores.excluded:
            raise ValueError("excluded questions carry no gate metrics")
        theta = self.thresholds.for_span(span)
        values = {
            "faithfulness": scores.agg_faithfulness,
            "relevance": scores.agg_relevance,
            "specificity": float(scores.specificity),
        }
        return [name for name, value in values.items() if value < theta]

    def improve(self, qa: QAPair, scores: EvalScores) -> ImprovementResult:
        """One improvement attempt, allowed only when exactly one metric is
        weak. Two or more weak metrics discard without a provider call."""
        weak = self.weak_metrics(scores, qa.span)
        if not weak:
            raise ValueError(f"{qa.qa_id} has no weak metric to improve")
        if len(weak) >= 2:
            return ImprovementResult(qa, "discarded_multi_weak", before=scores)
        metric = weak[0]
        data = self._ask(
            IMPROVE_PROMPT.format(
                metric=metric,
                focus=IMPROVE_FOCUS[metric],
                span=qa.span,
                hops=qa.hops,
                industries=", ".join(qa.industries),
                question=qa.rendered_question(),
                snippets="\n".join(f"- {s}" for s in qa.reference_text),
            ),
            QUESTION_SCHEMA,
        )
        improved = replace(qa, question=data["question"])
        after = self.evaluate_fn(improved)
        if after.excluded:
            return ImprovementResult(qa, "discarded_new_failure", metric, scores, after)
        new_weak = self.weak_metrics(after, qa.span)
        if metric in new_weak:
            return ImprovementResult(qa, "discarded_still_failing", metric, scores, after)
        if new_weak:
            return ImprovementResult(qa, "discarded_new_failure", metric, scores, after)
        return ImprovementResult(improved, "improved", metric, scores, after)

    # --- generalisation ---------------------------------------------------

    def _mention_patterns(self) -> list[str]:
        mentions: set[str] = set()
        for ind, name in self.industry_names.items():
            mentions.add(ind)
            if name:
                mentions.add(name)
        return sorted(mentions, key=len, reverse=True)

    def find_industry_mention(self, text: str) -> tuple[int, int] | None:
        """First span where the question names a corpus industry (by id or
        display name, case-insensitive)."""
        lowered = text.lower()
        for mention in self._mention_patterns():
            pos = lowered.find(mention.lower())
            if pos >= 0:
                return (pos, pos + len(mention))
        return None

    def _mention_spans(self, text: str) -> list[tuple[int, int]]:
        lowered = text.lower()
        spans = []
        for mention in self._mention_patterns():
            needle = mention.lower()
            start = 0
            while True:
                pos = lowered.find(needle, start)
                if pos < 0:
                    break
                spans.append((pos, pos + len(mention)))
                start = pos + 1
        return spans

    def generalise(self, qa: QAPair) -> QAPair:
        """Replace the industry mention with a generic activity description.

        The rewrite is diff-checked: it must equal the original with
        exactly one mention span substituted, and must no longer name any
        corpus industry. Anything else raises RewriteScopeViolation.
        """
        spans = self._mention_spans(qa.question)
        if not spans:
            raise ValueError(f"{qa.qa_id} does not mention an industry")
        data = self._ask(GENERALISE_PROMPT.format(question=qa.question), QUESTION_SCHEMA)
        rewritten = data["question"]
        confined = any(
            rewritten.startswith(qa.question[:s])
            and rewritten.endswith(qa.question[e:])
            and len(rewritten) >= len(qa.question) - (e - s)
            for s, e in spans
        )
        if not confined:
            raise RewriteScopeViolation(
                f"{qa.qa_id}: rewrite altered text outside the industry mention"
            )
        if self.find_industry_mention(rewritten) is not None:
            raise RewriteScopeViolation(f"{qa.qa_id}: rewrite still names an industry")
        return replace(qa, question=rewritten)

    # --- single best answer -------------------------------------------------

    def sba_check(self, qa: QAPair) -> SbaResult:
        """Pass iff the judge finds exactly the labeled option correct."""
        if qa.format != "mcq":
            raise ValueError("single-best-answer audit applies to mcq only")
        data = self._ask(
            SBA_PROMPT.format(
                question=qa.rendered_question(),
                snippets="\n".join(f"- {s}" for s in qa.reference_text),
            ),
            SBA_SCHEMA,
        )
        correct = tuple(sorted(set(data["correct_options"])))
        if not correct:
            return SbaResult(False, correct, "zero_correct")
        if len(correct) > 1:
            return SbaResult(False, correct, "multiple_correct")
        if correct[0] != qa.answer:
            return SbaResult(False, correct, "wrong_single")
        return SbaResult(True, correct, "ok")


# --- near-duplicate filtering -----------------------------------------------------

class SimilarityFilter:
    """Greedy cosine near-duplicate detector over question embeddings."""

    def __init__(self, embed_fn: Callable[[Sequence[str]], list[list[float]]], threshold: float = 0.99) -> None:
        if not 0.0 < threshold <= 1.0:
            raise ValueError("threshold must be in (0, 1]")
        self.embed_fn = embed_fn
        self.threshold = threshold
        self._kept: list[np.ndarray] = []

    def _vector(self, text: str) -> np.ndarray:
        vec = np.asarray(self.embed_fn([text])[0], dtype=np.float64)
        norm = np.linalg.norm(vec)
        return vec / norm if norm else vec

    def is_duplicate(self, text: str) -> bool:
        """True when cosine similarity to any kept text exceeds the threshold."""
        if not self._kept:
            return False
        vec = self._vector(text)
        return any(float(vec @ kept) > self.threshold for kept in self._kept)

    def add(self, text: str) -> None:
        self._kept.append(self._vector(text))


def similarity_filter(
    pairs: Sequence[QAPair],
    embed_fn: Callable[[Sequence[str]], list[list[float]]],
    threshold: float = 0.99,
) -> tuple[list[QAPair], list[str]]:
    """Batch near-duplicate pass: scan in qa_id order, keep a question iff
    its cosine similarity to every already-kept question is <= threshold.
    Returns (kept, dropped qa_ids)."""
    ordered = sorted(pairs, key=lambda q: q.qa_id)
    if not ordered:
        return [], []
    vectors = np.asarray(embed_fn([q.question for q in ordered]), dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    vectors = vectors / norms
    kept: list[QAPair] = []
    kept_rows: list[int] = []
    dropped: list[str] = []
    for i, qa in enumerate(ordered):
        if kept_rows and float(np.max(vectors[kept_rows] @ vectors[i])) > threshold:
            dropped.append(qa.qa_id)
        else:
            kept.append(qa)
            kept_rows.append(i)
    return kept, dropped
