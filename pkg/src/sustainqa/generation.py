"""Synthetic QA dataset generation.

Questions come in eight configurations (span x hops x format), are
produced by one of three prompting methods, and pass through a gated
acceptance pipeline: judge scoring, at most one targeted improvement,
industry-mention generalisation, near-duplicate rejection, and a
single-best-answer audit for multiple choice. Every generated question
leaves an audit record whether or not it is accepted.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

from .ingest import IndustryDoc
from .providers.base import LlmProvider, Message, ProviderRequest

if TYPE_CHECKING:  # avoid an import cycle; evaluation imports QAPair from here
    from .evaluation import EvalScores

SPANS = ("local", "cross_industry")
HOPS = ("single", "multi")
FORMATS = ("mcq", "free_text")
METHODS = ("baseline", "cot", "cot_fewshot")
OPTION_LETTERS = ("A", "B", "C", "D", "E")


class GenerationError(Exception):
    pass


class UnderGeneration(GenerationError):
    """Model produced fewer questions than requested, even after one
    follow-up asking for the remainder."""


class UnknownIndustryId(GenerationError):
    pass


@dataclass(frozen=True)
class QaType:
    span: str
    hops: str
    format: str

    def __post_init__(self) -> None:
        if self.span not in SPANS:
            raise ValueError(f"span must be one of {SPANS}")
        if self.hops not in HOPS:
            raise ValueError(f"hops must be one of {HOPS}")
        if self.format not in FORMATS:
            raise ValueError(f"format must be one of {FORMATS}")

    @property
    def key(self) -> str:
        return f"{self.span}/{self.hops}/{self.format}"


ALL_TYPES: tuple[QaType, ...] = tuple(
    QaType(span, hops, fmt) for span in SPANS for hops in HOPS for fmt in FORMATS
)


@dataclass(frozen=True)
class QAPair:
    """One dataset item. For mcq, ``options`` maps the letters A-E to
    option texts and ``answer`` is the correct letter; for free_text,
    ``answer`` is the reference answer and options is None."""

    qa_id: str
    question: str
    answer: str
    span: str
    hops: str
    format: str
    industries: tuple[str, ...]
    reference_text: tuple[str, ...]
    pages: tuple[str, ...]
    options: tuple[tuple[str, str], ...] | None = None
    method: str = "baseline"
    temperature: float = 0.5

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise ValueError("question must be non-empty")
        if self.span not in SPANS or self.hops not in HOPS or self.format not in FORMATS:
            raise ValueError(f"bad type tags on {self.qa_id}")
        if not self.industries:
            raise ValueError("industries must be non-empty")
        if self.span == "local" and len(self.industries) != 1:
            raise ValueError("local questions cover exactly one industry")
        if self.span == "cross_industry" and len(self.industries) < 2:
            raise ValueError("cross-industry questions need at least two industries")
        if not self.reference_text:
            raise ValueError("reference_text must be non-empty")
        if self.format == "mcq":
            if self.options is None or tuple(k for k, _ in self.options) != OPTION_LETTERS:
                raise ValueError("mcq needs options labeled exactly A-E in order")
            if self.answer not in OPTION_LETTERS:
                raise ValueError(f"mcq answer must be a letter A-E, got {self.answer!r}")
        else:
            if self.options is not None:
                raise ValueError("free_text questions carry no options")
            if not self.answer.strip():
                raise ValueError("free_text answer must be non-empty")

    def option_map(self) -> dict[str, str]:
        return dict(self.options or ())

    def answer_text(self) -> str:
        """The correct answer as text (option body for mcq)."""
        if self.format == "mcq":
            return self.option_map()[self.answer]
        return self.answer

    def rendered_question(self) -> str:
        """Question plus options for judging and prompting."""
        if self.format != "mcq":
            return self.question
        lines = [self.question]
        for letter, text in self.options or ():
            lines.append(f"{letter}) {text}")
        return "\n".join(lines)


def make_qa_id(question: str, industries: Sequence[str], qtype: QaType) -> str:
    payload = "\x1f".join([question, ",".join(industries), qtype.key])
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


# --- dataset serialization ----------------------------------------------------

def qa_to_json(qa: QAPair) -> dict:
    data = {
        "qa_id": qa.qa_id,
        "question": qa.question,
        "answer": qa.answer,
        "span": qa.span,
        "hops": qa.hops,
        "format": qa.format,
        "industries": list(qa.industries),
        "reference_text": list(qa.reference_text),
        "pages": list(qa.pages),
        "method": qa.method,
        "temperature": qa.temperature,
    }
    if qa.options is not None:
        data["options"] = {k: v for k, v in qa.options}
    return data


def qa_from_json(data: dict) -> QAPair:
    options = None
    if data.get("options") is not None:
        options = tuple((letter, data["options"][letter]) for letter in OPTION_LETTERS)
    return QAPair(
        qa_id=data["qa_id"],
        question=data["question"],
        answer=data["answer"],
        span=data["span"],
        hops=data["hops"],
        format=data["format"],
        industries=tuple(data["industries"]),
        reference_text=tuple(data["reference_text"]),
        pages=tuple(str(p) for p in data["pages"]),
        options=options,
        method=data.get("method", "baseline"),
        temperature=float(data.get("temperature", 0.5)),
    )


def save_dataset(pairs: Iterable[QAPair], path: str | Path) -> None:
    """JSONL, sorted by qa_id so repeated runs are byte-identical."""
    rows = sorted(pairs, key=lambda q: q.qa_id)
    with open(path, "w", encoding="utf-8") as fh:
        for qa in rows:
            fh.write(json.dumps(qa_to_json(qa), sort_keys=True, ensure_ascii=False) + "\n")


def load_dataset(path: str | Path) -> list[QAPair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                pairs.append(qa_from_json(json.loads(line)))
    return pairs


# --- question structure bank --------------------------------------------------

class QuestionStructureBank:
    """Per-configuration example question structures used by the few-shot
    method. Each category holds 10 to 18 templates with xxx placeholders."""

    MIN_TEMPLATES = 10
    MAX_TEMPLATES = 18

    def __init__(self, templates: dict[tuple[str, str, str], Sequence[str]]) -> None:
        for key, bank in templates.items():
            if not (self.MIN_TEMPLATES <= len(bank) <= self.MAX_TEMPLATES):
                raise ValueError(
                    f"category {key} has {len(bank)} templates; expected "
                    f"{self.MIN_TEMPLATES}..{self.MAX_TEMPLATES}"
                )
        self._templates = {k: tuple(v) for k, v in templates.items()}

    def categories(self) -> list[tuple[str, str, str]]:
        return sorted(self._templates)

    def templates_for(self, qtype: QaType) -> tuple[str, ...]:
        key = (qtype.span, qtype.hops, qtype.format)
        if key not in self._templates:
            raise KeyError(f"no structures for {key}")
        return self._templates[key]

    def sample(self, qtype: QaType, rng: random.Random) -> list[str]:
        """10 to 12 structures, sampled without replacement."""
        bank = self.templates_for(qtype)
        k = min(len(bank), rng.randint(10, 12))
        return rng.sample(list(bank), k)


_LOCAL_SINGLE_MCQ = (
    "What is the unit of measure for the metric xxx in the xxx standard?",
    "Which code is assigned to the metric xxx?",
    "Under which disclosure topic does the metric xxx appear?",
    "Which category applies to the metric xxx?",
    "Which of the following is a disclosure topic of the xxx standard?",
    "Which of the following is an activity metric defined for the xxx industry?",
    "What does the code xxx identify?",
    "Which metric under the topic xxx is measured in xxx?",
    "How many metrics make up the disclosure topic xxx?",
    "Which percentage-based metric belongs to the topic xxx?",
    "Which gas or pollutant is named in the metric xxx?",
    "Which unit of measure applies to the activity metric xxx?",
)

_LOCAL_MULTI_MCQ = (
    "Which two metrics of the xxx standard share the unit xxx?",
    "Which disclosure topic of the xxx standard contains both the metric xxx and the metric xxx?",
    "How does the unit of measure of xxx differ from that of xxx?",
    "Which code belongs to the same disclosure topic as the code xxx?",
    "Which metric is quantitative, while the metric xxx is discussion and analysis?",
    "How many of the metrics under the topic xxx are measured in xxx?",
    "Which disclosure topic has more metrics, xxx or xxx?",
    "Which unit of measure is used by both the activity metric xxx and the metric xxx?",
    "Which topics of the xxx standard each include a metric measured in xxx?",
    "Which metric shares its category with xxx but belongs to the topic xxx?",
    "What is the total number of metrics across the topics xxx and xxx?",
    "Which option correctly pairs the metrics xxx and xxx with their disclosure topics?",
)

_CROSS_SINGLE_MCQ = (
    "Which of the industries xxx and xxx defines the metric xxx?",
    "Which of the following disclosure topics appears in both the xxx and xxx standards?",
    "Which industry among xxx and xxx uses the code xxx?",
    "Which of the following metrics is defined in the xxx standard but not in the xxx standard?",
    "Which of the industries xxx and xxx includes a disclosure topic on xxx?",
    "Which standard, xxx or xxx, defines the activity metric xxx?",
    "Which industry's standard assigns the code xxx, xxx or xxx?",
    "Which of the following topics is covered by the xxx standard but not the xxx standard?",
    "Which metric appears verbatim in both the xxx and xxx standards?",
    "Which of the industries xxx and xxx reports xxx quantitatively?",
    "Which industry, xxx or xxx, defines a metric measured in xxx?",
    "Which of the industries xxx and xxx addresses xxx in its standard?",
)

_CROSS_MULTI_MCQ = (
    "Which unit of measure is shared by the metric xxx in the xxx standard and the metric xxx in the xxx standard?",
    "How do the codes for xxx differ between the xxx and xxx standards?",
    "Which disclosure topic appears in both the xxx and xxx standards but with different metrics?",
    "Which two metrics, one from the xxx standard and one from the xxx standard, are both measured in xxx?",
    "How many disclosure topics do the xxx and xxx standards define in total?",
    "Which category applies to xxx in the xxx standard but not to xxx in the xxx standard?",
    "Which industry defines more metrics under the topic xxx, xxx or xxx?",
    "Which metric of the xxx standard corresponds by topic to the metric xxx of the xxx standard?",
    "Considering the activity metrics of xxx and xxx, which unit of measure appears in both standards?",
    "Which statement about the topic xxx is true for the xxx standard but false for the xxx standard?",
    "Which pair of codes, one from each of the xxx and xxx standards, addresses xxx?",
    "Which standard defines more quantitative metrics for the topic xxx, xxx or xxx?",
)

_LOCAL_SINGLE_FREE = (
    "State the unit of measure for the metric xxx in the xxx standard.",
    "Which code identifies the metric xxx?",
    "Name the disclosure topic that contains the metric xxx.",
    "What category is assigned to the metric xxx?",
    "List the activity metrics defined for the xxx industry.",
    "What does the code xxx refer to?",
    "How many metrics does the topic xxx contain?",
    "Name one percentage-based metric in the xxx standard.",
    "Which gas or pollutant does the metric xxx cover?",
    "Describe what the metric xxx asks a company to report.",
    "State the scope of the disclosure topic xxx.",
    "Which unit of measure applies to the activity metric xxx?",
)

_LOCAL_MULTI_FREE = (
    "Which two metrics of the xxx standard share the unit xxx?",
    "Explain how the units of measure of xxx and xxx differ.",
    "Name the disclosure topic that contains both xxx and xxx.",
    "Compare the categories of the metrics xxx and xxx.",
    "How many metrics in total fall under the topics xxx and xxx?",
    "Which topic of the xxx standard has more metrics, xxx or xxx?",
    "List the metrics under the topic xxx that are measured in xxx.",
    "Which code belongs to the same topic as xxx, and what does it measure?",
    "Summarize the relationship between the topics xxx and xxx.",
    "Which metrics of the xxx standard are discussion and analysis rather than quantitative?",
    "Identify the unit shared by the activity metric xxx and the metric xxx.",
    "Name the disclosure topics of the codes xxx and xxx.",
)

_CROSS_SINGLE_FREE = (
    "Which of the industries xxx and xxx defines the metric xxx?",
    "Name a disclosure topic that appears in both the xxx and xxx standards.",
    "Which standard, xxx or xxx, assigns the code xxx?",
    "State which of the industries xxx and xxx reports xxx.",
    "Which industry's standard, xxx or xxx, includes a topic on xxx?",
    "Name a metric that the xxx standard defines but the xxx standard does not.",
    "Which standard, xxx or xxx, defines the activity metric xxx?",
    "Which of the industries xxx and xxx measures xxx in xxx?",
    "Identify the industry, xxx or xxx, whose standard covers xxx.",
    "Which standard, xxx or xxx, uses the unit xxx for the metric xxx?",
    "Name the industry among xxx and xxx whose metric codes start with xxx.",
    "Which of the standards xxx and xxx addresses xxx as a disclosure topic?",
)

_CROSS_MULTI_FREE = (
    "Compare the units of measure used for xxx in the xxx and xxx standards.",
    "Which unit is shared by the metric xxx of the xxx standard and the metric xxx of the xxx standard?",
    "Explain how the topic xxx differs between the xxx and xxx standards.",
    "How many disclosure topics do the xxx and xxx standards define in total?",
    "Name two metrics, one from each of the xxx and xxx standards, measured in xxx.",
    "Contrast the categories assigned to xxx in the xxx standard and xxx in the xxx standard.",
    "Which industry defines more metrics under the topic xxx, xxx or xxx?",
    "Describe the metric in the xxx standard that corresponds by topic to the xxx standard's metric xxx.",
    "List the activity metric units that the xxx and xxx standards have in common.",
    "Summarize how the codes for xxx-related metrics differ between the xxx and xxx standards.",
    "Which topics appear in the xxx standard but not in the xxx standard?",
    "Identify the pair of codes, one per standard, that address xxx in the xxx and xxx standards.",
)


def default_structure_bank() -> QuestionStructureBank:
    return QuestionStructureBank(
        {
            ("local", "single", "mcq"): _LOCAL_SINGLE_MCQ,
            ("local", "multi", "mcq"): _LOCAL_MULTI_MCQ,
            ("cross_industry", "single", "mcq"): _CROSS_SINGLE_MCQ,
            ("cross_industry", "multi", "mcq"): _CROSS_MULTI_MCQ,
            ("local", "single", "free_text"): _LOCAL_SINGLE_FREE,
            ("local", "multi", "free_text"): _LOCAL_MULTI_FREE,
            ("cross_industry", "single", "free_text"): _CROSS_SINGLE_FREE,
            ("cross_industry", "multi", "free_text"): _CROSS_MULTI_FREE,
        }
    )


# --- prompts and schemas --------------------------------------------------------

_SPAN_RULES = {
    "local": "Every question must be answerable from the single standard provided.",
    "cross_industry": (
        "Every question must require information from all of the provided industry "
        "standards together, and must name each industry so it is understandable "
        "without seeing the source."
    ),
}

_HOPS_RULES = {
    "single": "Each question should test one retrievable fact (a single lookup).",
    "multi": (
        "Each question must require combining at least two distinct facts from the "
        "source (multiple lookups) before it can be answered."
    ),
}

_FORMAT_RULES = {
    "mcq": (
        "Each item is a multiple-choice question with exactly five options A to E. "
        "Exactly one option is correct; the other four must be plausible but wrong. "
        "Record the correct letter in answer."
    ),
    "free_text": (
        "Each item is an open question with a short factual answer taken from the source."
    ),
}

_COT_RULE = (
    "Work step by step for each item: first pick the supporting fact or facts, then "
    "draft the question, then verify the answer against the source. Keep the "
    "reasoning to yourself and output only the JSON."
)

_FEWSHOT_RULE = (
    "Model your questions on the structure examples below, substituting specifics "
    "for xxx. Choose a different structure for each question and vary the focus "
    "across topics, metrics, categories, units of measure, and codes.\n{structures}"
)


def _generation_prompt(contexts: Sequence[tuple[str, str]], qtype: QaType, n: int, method: str, structures: Sequence[str] | None) -> str:
    source = "\n\n".join(f"## industry: {ind}\n\n{text}" for ind, text in contexts)
    rules = [
        _SPAN_RULES[qtype.span],
        _HOPS_RULES[qtype.hops],
        _FORMAT_RULES[qtype.format],
        "Questions must be answerable from the source material alone.",
        "For every question, copy the exact supporting snippet or snippets from the "
        "source into reference_text, and list the page number or numbers in pages.",
    ]
    if method == "cot":
        rules.append(_COT_RULE)
    if method == "cot_fewshot":
        rules.append(_COT_RULE)
        assert structures is not None
        rules.append(_FEWSHOT_RULE.format(structures="\n".join(f"- {s}" for s in structures)))
    rule_text = "\n".join(f"- {r}" for r in rules)
    return (
        "You are preparing assessment questions about industry sustainability "
        "reporting standards.\n\n"
        f"Source material:\n\n{source}\n\n"
        f"Write exactly {n} questions following all of these rules:\n{rule_text}\n"
        "Return JSON."
    )


def _qa_item_schema(fmt: str) -> dict:
    props: dict = {
        "question": {"type": "string"},
        "reference_text": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "pages": {"type": "array", "items": {"type": "string"}, "minItems": 1},
    }
    required = ["question", "answer", "reference_text", "pages"]
    if fmt == "mcq":
        for letter in OPTION_LETTERS:
            props[f"option{letter}"] = {"type": "string"}
        props["answer"] = {"type": "string", "enum": list(OPTION_LETTERS)}
        required = ["question", *(f"option{letter}" for letter in OPTION_LETTERS), "answer", "reference_text", "pages"]
    else:
        props["answer"] = {"type": "string"}
    return {"type": "object", "properties": props, "required": required}


def qa_batch_schema(fmt: str, n: int) -> dict:
    return {
        "type": "object",
        "properties": {
            "qa_pairs": {
                "type": "array",
                "items": _qa_item_schema(fmt),
                "minItems": 1,
                "maxItems": n,
            }
        },
        "required": ["qa_pairs"],
    }


def _parse_items(items: Sequence[dict], contexts: Sequence[tuple[str, str]], qtype: QaType, method: str, temperature: float) -> list[QAPair]:
    industries = tuple(ind for ind, _ in contexts)
    pairs = []
    for item in items:
        options = None
        if qtype.format == "mcq":
            options = tuple((letter, item[f"option{letter}"]) for letter in OPTION_LETTERS)
        question = item["question"]
        pairs.append(
            QAPair(
                qa_id=make_qa_id(question, industries, qtype),
                question=question,
                answer=item["answer"],
                span=qtype.span,
                hops=qtype.hops,
                format=qtype.format,
                industries=industries,
                reference_text=tuple(item["reference_text"]),
                pages=tuple(str(p) for p in item["pages"]),
                options=options,
                method=method,
                temperature=temperature,
            )
        )
    return pairs


def generate_qa(
    provider: LlmProvider,
    model_id: str,
    contexts: Sequence[tuple[str, str]],
    qtype: QaType,
    n: int,
    method: str = "baseline",
    temperature: float = 0.5,
    bank: QuestionStructureBank | None = None,
    rng: random.Random | None = None,
) -> list[QAPair]:
    """Generate exactly n questions of one configuration.

    A short batch triggers one follow-up request for the remainder;
    if the total still falls short, UnderGeneration is raised. Extra
    items beyond n are dropped deterministically (first n kept).
    """
    if n < 1:
        raise ValueError("n must be positive")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if not contexts:
        raise ValueError("at least one industry context is required")
    if qtype.span == "local" and len(contexts) != 1:
        raise ValueError("local generation takes exactly one industry context")
    if qtype.span == "cross_industry" and len(contexts) < 2:
        raise ValueError("cross-industry generation takes at least two contexts")

    structures = None
    if method == "cot_fewshot":
        bank = bank or default_structure_bank()
        rng = rng or random.Random(0)
        structures = bank.sample(qtype, rng)

    prompt = _generation_prompt(contexts, qtype, n, method, structures)
    req = ProviderRequest(
        model_id=model_id,
        messages=(Message("user", prompt),),
        temperature=temperature,
        output_schema=qa_batch_schema(qtype.format, n),
        max_output=8192,
    )
    items = list(provider.complete(req).structured["qa_pairs"])
    if len(items) < n:
        remainder = n - len(items)
        followup = (
            prompt
            + f"\n\nYou previously produced only {len(items)} of the {n} requested questions. "
            + f"Write {remainder} additional, different questions under the same rules. Return JSON."
        )
        req2 = ProviderRequest(
            model_id=model_id,
            messages=(Message("user", followup),),
            temperature=temperature,
            output_schema=qa_batch_schema(qtype.format, remainder),
            max_output=8192,
        )
        items.extend(provider.complete(req2).structured["qa_pairs"])
    if len(items) < n:
        raise UnderGeneration(f"asked for {n} {qtype.key} questions, got {len(items)}")
    return _parse_items(items[:n], contexts, qtype, method, temperature)


# --- industry pairing -----------------------------------------------------------

PAIRING_PROMPT = (
    "Below are industry identifiers with a short description of each. Group related "
    "industries into groups of about {group_size}, putting industries together when "
    "their activities, supply chains, or sustainability concerns overlap. Every "
    "industry belongs to exactly one group. Return JSON with one entry per group "
    "listing its industry ids and a one-line reason.\n\n{listing}"
)


def pairing_schema(ids: Sequence[str], group_size: int) -> dict:
    return {
        "type": "object",
        "properties": {
            "groups": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "type": "object",
                    "properties": {
                        "industries": {
                            "type": "array",
                            "items": {"type": "string", "enum": sorted(ids)},
                            "minItems": 2,
                            "maxItems": max(2, group_size),
                        },
                        "reason": {"type": "string"},
                    },
                    "required": ["industries", "reason"],
                },
            }
        },
        "required": ["groups"],
    }


def pair_industries(
    provider: LlmProvider,
    model_id: str,
    descriptions: dict[str, str],
    group_size: int = 5,
    temperature: float = 0.0,
) -> list[list[str]]:
    """Ask the model to group related industries; returns the groups.

    Ids outside the corpus are rejected. Cross-industry pairs are the
    within-group 2-combinations, see derive_pairs.
    """
    if len(descriptions) < 2:
        raise ValueError("pairing needs at least two industries")
    listing = "\n".join(f"- {ind}: {desc}" for ind, desc in sorted(descriptions.items()))
    req = ProviderRequest(
        model_id=model_id,
        messages=(Message("user", PAIRING_PROMPT.format(group_size=group_size, listing=listing)),),
        temperature=temperature,
        output_schema=pairing_schema(list(descriptions), group_size),
    )
    data = provider.complete(req).structured
    groups: list[list[str]] = []
    for group in data["groups"]:
        ids = list(dict.fromkeys(group["industries"]))  # dedup, keep order
        for ind in ids:
            if ind not in descriptions:
                raise UnknownIndustryId(f"pairing returned unknown industry {ind!r}")
        if len(ids) >= 2:
            groups.append(ids)
    if not groups:
        raise GenerationError("pairing produced no usable groups")
    return groups


def derive_pairs(groups: Sequence[Sequence[str]]) -> list[tuple[str, str]]:
    """Unique unordered within-group pairs, sorted for determinism."""
    pairs = set()
    for group in groups:
        ids = sorted(set(group))
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                pairs.add((ids[i], ids[j]))
    return sorted(pairs)


# --- gated generation pipeline ----------------------------------------------------

@dataclass
class GateThresholds:
    """Minimum acceptable judge scores on the 1-10 scale, by span."""

    local: float = 9.0
    cross_industry: float = 7.0

    def for_span(self, span: str) -> float:
        return self.local if span == "local" else self.cross_industry


@dataclass
class GenerationPlan:
    types: tuple[QaType, ...]
    n_per_type: int
    method: str = "baseline"
    temperature: float = 0.5
    thresholds: GateThresholds = field(default_factory=GateThresholds)
    similarity_threshold: float = 0.99
    seed: int = 0
    industry_pairs: tuple[tuple[str, str], ...] | None = None
    pairing_group_size: int = 5

    def __post_init__(self) -> None:
        if not self.types:
            raise ValueError("plan needs at least one question type")
        if self.n_per_type < 1:
            raise ValueError("n_per_type must be positive")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not 0.0 < self.similarity_threshold <= 1.0:
            raise ValueError("similarity threshold must be in (0, 1]")


@dataclass
class AuditRecord:
    """What happened to one generated question on its way through the gates."""

    qa_id: str
    type_key: str
    question: str
    outcome: str  # accepted | discarded
    reason: str | None = None
    improved: bool = False
    improvement_outcome: str | None = None
    generalised: bool = False
    generalisation_violation: bool = False
    similar: bool = False
    sba_checked: bool = False
    sba_pass: bool | None = None

    def to_json(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "type": self.type_key,
            "question": self.question,
            "outcome": self.outcome,
            "reason": self.reason,
            "improved": self.improved,
            "improvement_outcome": self.improvement_outcome,
            "generalised": self.generalised,
            "generalisation_violation": self.generalisation_violation,
            "similar": self.similar,
            "sba_checked": self.sba_checked,
            "sba_pass": self.sba_pass,
        }


@dataclass
class GenerationOutcome:
    accepted: list[QAPair]
    audits: list[AuditRecord]
    scores: dict[str, "EvalScores"]

    @property
    def discarded(self) -> list[AuditRecord]:
        return [a for a in self.audits if a.outcome == "discarded"]


def _distribute(total: int, buckets: int) -> list[int]:
    base, extra = divmod(total, buckets)
    return [base + (1 if i < extra else 0) for i in range(buckets)]


def run_generation_pipeline(
    provider: LlmProvider,
    generator_model: str,
    docs: Sequence[IndustryDoc],
    plan: GenerationPlan,
    evaluator=None,
    post=None,
    pairing_model: str | None = None,
) -> GenerationOutcome:
    """Generate, judge, and gate a dataset.

    Per question: evaluate; if the reference gate excludes it, discard.
    If exactly one of (faithfulness, relevance, specificity) is below
    the span threshold, attempt one improvement; two or more weak
    metrics discard outright. Questions naming an industry are
    generalised (scope-checked). Near-duplicates of already accepted
    questions are discarded. MCQs finally face the single-best-answer
    audit. One audit record per generated question.
    """
    from .evaluation import Evaluator  # wired lazily to avoid an import cycle
    from .postprocess import PostProcessor, RewriteScopeViolation, SimilarityFilter

    doc_map = {d.industry_id: d for d in docs}
    if evaluator is None:
        evaluator = Evaluator(provider, generator_model, doc_map)
    if post is None:
        post = PostProcessor(
            provider,
            generator_model,
            evaluate_fn=evaluator.evaluate,
            thresholds=plan.thresholds,
            industry_names={d.industry_id: d.title for d in docs},
        )

    rng = random.Random(plan.seed)
    bank = default_structure_bank()
    local_ids = sorted(doc_map)
    pairs = plan.industry_pairs
    if pairs is None and any(t.span == "cross_industry" for t in plan.types):
        descriptions = {d.industry_id: industry_blurb(d) for d in docs}
        groups = pair_industries(
            provider, pairing_model or generator_model, descriptions, plan.pairing_group_size
        )
        pairs = tuple(derive_pairs(groups))

    generated: list[QAPair] = []
    for qtype in plan.types:
        if qtype.span == "local":
            context_sets: list[list[str]] = [[ind] for ind in local_ids]
        else:
            if not pairs:
                raise GenerationError("cross-industry types need industry pairs")
            context_sets = [list(p) for p in pairs]
        counts = _distribute(plan.n_per_type, len(context_sets))
        for ids, count in zip(context_sets, counts):
            if count == 0:
                continue
            contexts = [(ind, doc_map[ind].markdown) for ind in ids]
            generated.extend(
                generate_qa(
                    provider,
                    generator_model,
                    contexts,
                    qtype,
                    count,
                    method=plan.method,
                    temperature=plan.temperature,
                    bank=bank,
                    rng=rng,
                )
            )

    sim = SimilarityFilter(provider.embed, plan.similarity_threshold)
    accepted: list[QAPair] = []
    audits: list[AuditRecord] = []
    scores_by_id: dict[str, EvalScores] = {}

    for qa in generated:
        audit = AuditRecord(qa_id=qa.qa_id, type_key=f"{qa.span}/{qa.hops}/{qa.format}", question=qa.question, outcome="discarded")
        audits.append(audit)
        theta = plan.thresholds.for_span(qa.span)

        scores = evaluator.evaluate(qa)
        scores_by_id[qa.qa_id] = scores
        if scores.excluded:
            audit.reason = "ref_gate_excluded"
            continue

        weak = post.weak_metrics(scores, qa.span)
        if len(weak) >= 2:
            audit.reason = "discarded_multi_weak"
            audit.improvement_outcome = "discarded_multi_weak"
            continue
        if len(weak) == 1:
            result = post.improve(qa, scores)
            audit.improvement_outcome = result.outcome
            if result.outcome != "improved":
                audit.reason = result.outcome
                continue
            audit.improved = True
            qa = result.qa
            scores = result.after
            assert scores is not None
            scores_by_id[qa.qa_id] = scores

        if post.find_industry_mention(qa.question) is not None:
            try:
                qa = post.generalise(qa)
                audit.generalised = True
            except RewriteScopeViolation:
                audit.generalisation_violation = True

        if sim.is_duplicate(qa.question):
            audit.similar = True
            audit.reason = "discarded_similar"
            continue

        if qa.format == "mcq":
            audit.sba_checked = True
            sba = post.sba_check(qa)
            audit.sba_pass = sba.passed
            if not sba.passed:
                audit.reason = f"discarded_sba_{sba.reason}"
                continue

        sim.add(qa.question)
        accepted.append(qa)
        audit.outcome = "accepted"
        audit.reason = None
        audit.question = qa.question

    assert len(audits) == len(generated)
    return GenerationOutcome(accepted=accepted, audits=audits, scores=scores_by_id)


def industry_blurb(doc: IndustryDoc, max_chars: int = 400) -> str:
    """Short description of an industry: the first prose paragraph of its
    document, for pairing and classification prompts."""
    for block in doc.markdown.split("\n\n"):
        stripped = block.strip()
        if not stripped or stripped.startswith("#") or stripped.startswith("|") or stripped.startswith("**"):
            continue
        return stripped[:max_chars]
    return doc.title[:max_chars]


def save_audits(audits: Iterable[AuditRecord], path: str | Path) -> None:
    rows = sorted(audits, key=lambda a: a.qa_id)
    with open(path, "w", encoding="utf-8") as fh:
        for a in rows:
            fh.write(json.dumps(a.to_json(), sort_keys=True, ensure_ascii=False) + "\n")
