"""Judge-based quality scoring for generated QA datasets.

Three judged facets: the quoted reference snippets against the whole
source document (continuous 0-1), the question itself (integers 1-10,
few-shot anchored), and the answer against the reference snippets
(continuous 0-1), plus a 1-10 specificity score. Reference scores gate
everything: below the gate a question is excluded and gets no
aggregates. Continuous scores are rebased onto the 1-10 scale with
1 + 9x before averaging.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .generation import QAPair
from .ingest import IndustryDoc
from .providers.base import LlmProvider, Message, ProviderRequest
from .textmetrics import bleu, rouge_l_best

REF_GATE = 0.7


def rebase(raw: float) -> float:
    """Map a [0, 1] judge score onto the 1-10 scale."""
    if not 0.0 <= raw <= 1.0:
        raise ValueError(f"raw score must be in [0, 1], got {raw}")
    return 1.0 + 9.0 * raw


@dataclass
class EvalScores:
    """Full scorecard for one question.

    ``excluded`` is set when either reference score sits below the gate;
    excluded questions carry no question/answer/aggregate scores.
    """

    qa_id: str
    ref_faithfulness: float
    ref_relevance: float
    excluded: bool
    question_faithfulness: int | None = None
    question_relevance: int | None = None
    answer_faithfulness: float | None = None
    answer_relevance: float | None = None
    specificity: int | None = None
    agg_faithfulness: float | None = None
    agg_relevance: float | None = None
    bleu: float | None = None
    rouge_l: float | None = None

    def __post_init__(self) -> None:
        for name in ("ref_faithfulness", "ref_relevance"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        for name in ("question_faithfulness", "question_relevance", "specificity"):
            value = getattr(self, name)
            if value is not None and not 1 <= value <= 10:
                raise ValueError(f"{name} must be in 1..10, got {value}")
        if self.excluded:
            if self.agg_faithfulness is not None or self.agg_relevance is not None:
                raise ValueError("excluded questions cannot carry aggregate scores")

    def to_json(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "ref_faithfulness": self.ref_faithfulness,
            "ref_relevance": self.ref_relevance,
            "excluded": self.excluded,
            "question_faithfulness": self.question_faithfulness,
            "question_relevance": self.question_relevance,
            "answer_faithfulness": self.answer_faithfulness,
            "answer_relevance": self.answer_relevance,
            "specificity": self.specificity,
            "agg_faithfulness": self.agg_faithfulness,
            "agg_relevance": self.agg_relevance,
            "bleu": self.bleu,
            "rouge_l": self.rouge_l,
        }

    @classmethod
    def from_json(cls, data: dict) -> "EvalScores":
        fields = dict(data)
        return cls(**fields)


def aggregate(ref_raw: float, question_score: float, answer_raw: float) -> float:
    """Mean of the rebased reference score, the question judge score, and
    the rebased answer score, on the 1-10 scale."""
    return (rebase(ref_raw) + question_score + rebase(answer_raw)) / 3.0


# --- prompts ---------------------------------------------------------------------

CONTINUOUS_SCHEMA = {
    "type": "object",
    "properties": {
        "faithfulness": {"type": "number", "minimum": 0, "maximum": 1},
        "relevance": {"type": "number", "minimum": 0, "maximum": 1},
    },
    "required": ["faithfulness", "relevance"],
}

TEN_POINT_SCHEMA = {
    "type": "object",
    "properties": {
        "faithfulness": {"type": "integer", "minimum": 1, "maximum": 10},
        "relevance": {"type": "integer", "minimum": 1, "maximum": 10},
    },
    "required": ["faithfulness", "relevance"],
}

SPECIFICITY_SCHEMA = {
    "type": "object",
    "properties": {"specificity": {"type": "integer", "minimum": 1, "maximum": 10}},
    "required": ["specificity"],
}

REF_JUDGE_PROMPT = (
    "You audit evidence snippets quoted from industry reporting standards.\n"
    "Given the source document(s) and the snippet(s) a question cites as its "
    "evidence, score two things on a 0 to 1 scale:\n"
    "- faithfulness: the fraction of snippet content actually supported by the "
    "source (0 means fabricated, 1 means fully supported, ideally verbatim).\n"
    "- relevance: how well the snippets support answering the question (0 means "
    "unrelated, 1 means they contain everything needed).\n"
    "Return JSON.\n\n"
    "Question:\n{question}\n\n"
    "Cited snippets:\n{snippets}\n\n"
    "Source document(s):\n{source}"
)

ANSWER_JUDGE_PROMPT = (
    "You audit answers for questions about industry reporting standards.\n"
    "Given a question, its labeled answer, and the reference snippets that "
    "ground it, score on a 0 to 1 scale:\n"
    "- faithfulness: how fully the answer is supported by the reference snippets "
    "(0 means contradicted or fabricated, 1 means fully supported).\n"
    "- relevance: how directly the answer addresses the question (0 means off "
    "topic, 1 means exactly on point).\n"
    "Return JSON.\n\n"
    "Question:\n{question}\n\n"
    "Answer:\n{answer}\n\n"
    "Reference snippets:\n{snippets}"
)

QUESTION_JUDGE_PROMPT = (
    "You grade assessment questions written about industry sustainability "
    "reporting standards. Score two integers from 1 to 10:\n"
    "- faithfulness: is the question truly grounded in the provided source "
    "material (10 means every premise appears in the source, 1 means the "
    "question invents content)?\n"
    "- relevance: does the question fit its declared scope tags (10 means a "
    "clean fit, 1 means the tags are wrong)?\n"
    "Hard rule: when the declared span is cross_industry, the question must "
    "involve every industry listed; if it fails to cover them all, relevance "
    "is 1.\n\n"
    "Worked examples:\n"
    "Example A. Span local, industry airlines. Question: 'What is the unit of "
    "measure for total fuel consumed in the airlines standard?' The source "
    "defines that metric with a gigajoule unit. Scores: faithfulness 10, "
    "relevance 9.\n"
    "Example B. Span local, industry airlines. Question: 'What is the average "
    "salary of a commercial pilot?' The source never discusses pay, and the "
    "question ignores the reporting standard entirely. Scores: faithfulness 1, "
    "relevance 2.\n"
    "Example C. Span cross_industry, industries airlines and automobiles. "
    "Question: 'Which unit does the airlines standard use for fuel?' It ignores "
    "the automobiles standard, so the hard rule applies. Scores: faithfulness 6, "
    "relevance 1.\n\n"
    "Declared tags: span {span}, hops {hops}, industries {industries}.\n\n"
    "Question:\n{question}\n\n"
    "Source document(s):\n{source}\n\n"
    "Return JSON."
)

SPECIFICITY_PROMPT = (
    "Rate how specific this assessment question is, as one integer from 1 to "
    "10. Judge only the question text (options included when present), not "
    "whether it is answerable.\n"
    "Anchors:\n"
    "- 10: fully self-contained; names the industry or standard, the topic, and "
    "the exact metric or code it asks about.\n"
    "- 8: precise about what is asked, with one minor ambiguity such as a "
    "missing industry name.\n"
    "- 6: understandable but missing scope; a reader cannot tell which standard "
    "or topic it refers to.\n"
    "- 3: vague; the question could apply to almost any document.\n"
    "- 1: meaningless without seeing the source material.\n\n"
    "Question:\n{question}\n\n"
    "Return JSON."
)


@dataclass
class EvalConfig:
    ref_gate: float = REF_GATE
    judge_temperature: float = 0.0


class Evaluator:
    """Provider-backed judge pipeline for one corpus of documents."""

    def __init__(
        self,
        provider: LlmProvider,
        judge_model: str,
        docs: dict[str, IndustryDoc],
        config: EvalConfig | None = None,
    ) -> None:
        self.provider = provider
        self.judge_model = judge_model
        self.docs = docs
        self.config = config or EvalConfig()

    def _source_for(self, qa: QAPair) -> str:
        missing = [ind for ind in qa.industries if ind not in self.docs]
        if missing:
            raise KeyError(f"no documents for industries {missing}")
        return "\n\n".join(
            f"## industry: {ind}\n\n{self.docs[ind].markdown}" for ind in qa.industries
        )

    def _ask(self, prompt: str, schema: dict) -> dict:
        req = ProviderRequest(
            model_id=self.judge_model,
            messages=(Message("user", prompt),),
            temperature=self.config.judge_temperature,
            output_schema=schema,
        )
        return self.provider.complete(req).structured

    def judge_reference(self, qa: QAPair) -> tuple[float, float]:
        """(faithfulness, relevance) of the cited snippets vs the whole
        source document(s), each in [0, 1]."""
        data = self._ask(
            REF_JUDGE_PROMPT.format(
                question=qa.rendered_question(),
                snippets="\n".join(f"- {s}" for s in qa.reference_text),
                source=self._source_for(qa),
            ),
            CONTINUOUS_SCHEMA,
        )
        return float(data["faithfulness"]), float(data["relevance"])

    def judge_question(self, qa: QAPair) -> tuple[int, int]:
        data = self._ask(
            QUESTION_JUDGE_PROMPT.format(
                span=qa.span,
                hops=qa.hops,
                industries=", ".join(qa.industries),
                question=qa.rendered_question(),
                source=self._source_for(qa),
            ),
            TEN_POINT_SCHEMA,
        )
        return int(data["faithfulness"]), int(data["relevance"])

    def judge_answer(self, qa: QAPair) -> tuple[float, float]:
        data = self._ask(
            ANSWER_JUDGE_PROMPT.format(
                question=qa.rendered_question(),
                answer=qa.answer_text(),
                snippets="\n".join(f"- {s}" for s in qa.reference_text),
            ),
            CONTINUOUS_SCHEMA,
        )
        return float(data["faithfulness"]), float(data["relevance"])

    def judge_specificity(self, qa: QAPair) -> int:
        data = self._ask(
            SPECIFICITY_PROMPT.format(question=qa.rendered_question()), SPECIFICITY_SCHEMA
        )
        return int(data["specificity"])

    def evaluate(self, qa: QAPair) -> EvalScores:
        """Run all judges for one question, honoring the reference gate.

        Overlap metrics (BLEU, ROUGE-L) are computed for free_text
        answers against the reference snippets; for mcq the answer is a
        letter, so they are meaningless and stay unset.
        """
        ref_f, ref_r = self.judge_reference(qa)
        gate = self.config.ref_gate
        if ref_f < gate or ref_r < gate:
            return EvalScores(qa_id=qa.qa_id, ref_faithfulness=ref_f, ref_relevance=ref_r, excluded=True)
        q_f, q_r = self.judge_question(qa)
        a_f, a_r = self.judge_answer(qa)
        spec = self.judge_specificity(qa)
        bleu_score = rouge_score = None
        if qa.format == "free_text":
            bleu_score = bleu(qa.answer, list(qa.reference_text)).score
            rouge_score = rouge_l_best(qa.answer, list(qa.reference_text)).score
        return EvalScores(
            qa_id=qa.qa_id,
            ref_faithfulness=ref_f,
            ref_relevance=ref_r,
            excluded=False,
            question_faithfulness=q_f,
            question_relevance=q_r,
            answer_faithfulness=a_f,
            answer_relevance=a_r,
            specificity=spec,
            agg_faithfulness=aggregate(ref_f, q_f, a_f),
            agg_relevance=aggregate(ref_r, q_r, a_r),
            bleu=bleu_score,
            rouge_l=rouge_score,
        )


def save_scores(scores: Iterable[EvalScores], path: str | Path) -> None:
    rows = sorted(scores, key=lambda s: s.qa_id)
    with open(path, "w", encoding="utf-8") as fh:
        for s in rows:
            fh.write(json.dumps(s.to_json(), sort_keys=True, ensure_ascii=False) + "\n")


def load_scores(path: str | Path) -> list[EvalScores]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(EvalScores.from_json(json.loads(line)))
    return out
