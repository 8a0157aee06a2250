"""Benchmark a question-answering pipeline against a QA dataset.

MCQ responses go through a fixed letter-extraction precedence; anything
unextractable counts as incorrect and is flagged. Pipeline errors take
the question out of both the accuracy numerator and denominator but are
reported. Results aggregate per (span, format) cell and the report is
deterministic regardless of input order or worker count.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .generation import OPTION_LETTERS, QAPair
from .textmetrics import EmptyCandidate, bleu, rouge_l

_ANSWER_IS_RE = re.compile(r"\banswer\s+is\s*:?\s*\(?([A-Ea-e])\b")
_LEADING_LETTER_RE = re.compile(r"^\(?([A-Ea-e])[\.\):,]")


@dataclass(frozen=True)
class GradedAnswer:
    qa_id: str
    raw_answer: str
    extracted_letter: str | None
    correct: bool | None  # None exactly when no letter could be extracted
    flagged: bool  # unextractable responses are flagged and count as wrong


def extract_letter(raw_answer: str, options: dict[str, str] | None = None) -> str | None:
    """Extraction precedence: a lone letter A-E; then an 'answer is X' or
    leading 'X.' pattern; then a verbatim recital of one option's text."""
    stripped = raw_answer.strip()
    if re.fullmatch(r"[A-Ea-e]", stripped):
        return stripped.upper()
    m = _ANSWER_IS_RE.search(raw_answer)
    if m:
        return m.group(1).upper()
    m = _LEADING_LETTER_RE.match(stripped)
    if m:
        return m.group(1).upper()
    if options:
        for letter in OPTION_LETTERS:
            if letter in options and stripped == options[letter].strip():
                return letter
    return None


def grade_mcq(qa: QAPair, raw_answer: str) -> GradedAnswer:
    if qa.format != "mcq":
        raise ValueError("grade_mcq applies to mcq questions only")
    letter = extract_letter(raw_answer, qa.option_map())
    if letter is None:
        return GradedAnswer(qa.qa_id, raw_answer, None, None, flagged=True)
    return GradedAnswer(qa.qa_id, raw_answer, letter, letter == qa.answer, flagged=False)


@dataclass
class QuestionResult:
    qa_id: str
    span: str
    format: str
    errored: bool
    error: str | None = None
    raw_answer: str | None = None
    extracted_letter: str | None = None
    correct: bool | None = None
    flagged: bool = False
    bleu: float | None = None
    rouge_l: float | None = None

    def to_json(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "span": self.span,
            "format": self.format,
            "errored": self.errored,
            "error": self.error,
            "raw_answer": self.raw_answer,
            "extracted_letter": self.extracted_letter,
            "correct": self.correct,
            "flagged": self.flagged,
            "bleu": self.bleu,
            "rouge_l": self.rouge_l,
        }


@dataclass
class BenchCell:
    span: str
    format: str
    n: int = 0
    n_errored: int = 0
    n_correct: int = 0
    n_flagged: int = 0
    accuracy: float | None = None
    mean_bleu: float | None = None
    mean_rouge_l: float | None = None

    def to_json(self) -> dict:
        return {
            "span": self.span,
            "format": self.format,
            "n": self.n,
            "n_errored": self.n_errored,
            "n_correct": self.n_correct,
            "n_flagged": self.n_flagged,
            "accuracy": self.accuracy,
            "mean_bleu": self.mean_bleu,
            "mean_rouge_l": self.mean_rouge_l,
        }


@dataclass
class BenchReport:
    pipeline: str
    cells: list[BenchCell]
    results: list[QuestionResult]
    n_total: int = 0
    n_errored: int = 0

    def cell(self, span: str, fmt: str) -> BenchCell | None:
        for c in self.cells:
            if c.span == span and c.format == fmt:
                return c
        return None

    def to_json(self) -> dict:
        return {
            "pipeline": self.pipeline,
            "n_total": self.n_total,
            "n_errored": self.n_errored,
            "cells": [c.to_json() for c in self.cells],
            "results": [r.to_json() for r in self.results],
        }

    def render_markdown(self) -> str:
        lines = [
            f"# Benchmark report: {self.pipeline}",
            "",
            f"{self.n_total} questions, {self.n_errored} errored (excluded from scores).",
            "",
            "| span | format | n | errored | accuracy | BLEU | ROUGE-L |",
            "| --- | --- | --- | --- | --- | --- | --- |",
        ]
        for c in self.cells:
            acc = f"{c.accuracy:.4f}" if c.accuracy is not None else "-"
            bl = f"{c.mean_bleu:.4f}" if c.mean_bleu is not None else "-"
            rl = f"{c.mean_rouge_l:.4f}" if c.mean_rouge_l is not None else "-"
            lines.append(
                f"| {c.span} | {c.format} | {c.n} | {c.n_errored} | {acc} | {bl} | {rl} |"
            )
        return "\n".join(lines) + "\n"


def _overlap_scores(candidate: str, reference: str) -> tuple[float, float]:
    try:
        b = bleu(candidate, [reference]).score
        r = rouge_l(candidate, reference).score
    except EmptyCandidate:
        return 0.0, 0.0
    return b, r


def _run_one(qa: QAPair, answer_fn: Callable[[QAPair], str]) -> QuestionResult:
    result = QuestionResult(qa_id=qa.qa_id, span=qa.span, format=qa.format, errored=False)
    try:
        raw = answer_fn(qa)
    except Exception as exc:  # provider/pipeline failure: report, don't abort the run
        result.errored = True
        result.error = f"{type(exc).__name__}: {exc}"
        return result
    result.raw_answer = raw
    if qa.format == "mcq":
        graded = grade_mcq(qa, raw)
        result.extracted_letter = graded.extracted_letter
        result.correct = graded.correct
        result.flagged = graded.flagged
    else:
        result.bleu, result.rouge_l = _overlap_scores(raw, qa.answer)
    return result


def run_benchmark(
    dataset: Sequence[QAPair],
    answer_fn: Callable[[QAPair], str],
    pipeline_name: str = "pipeline",
    max_workers: int = 1,
) -> BenchReport:
    """Grade every question and aggregate per (span, format).

    ``answer_fn`` receives the QAPair (an MCQ prompt should render its
    options, see mcq_query) and returns the raw pipeline answer text.
    Accuracy counts flagged/unextractable answers as wrong; errored
    questions are excluded from the denominator entirely.
    """
    if not dataset:
        raise ValueError("benchmark needs a non-empty dataset")
    ordered = sorted(dataset, key=lambda q: q.qa_id)
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(lambda qa: _run_one(qa, answer_fn), ordered))
    else:
        results = [_run_one(qa, answer_fn) for qa in ordered]
    results.sort(key=lambda r: r.qa_id)

    cells: dict[tuple[str, str], BenchCell] = {}
    for r in results:
        cell = cells.setdefault((r.span, r.format), BenchCell(span=r.span, format=r.format))
        cell.n += 1
        if r.errored:
            cell.n_errored += 1
            continue
        if r.correct:
            cell.n_correct += 1
        if r.flagged:
            cell.n_flagged += 1
    for (span, fmt), cell in cells.items():
        scored = cell.n - cell.n_errored
        if fmt == "mcq":
            cell.accuracy = (cell.n_correct / scored) if scored else None
        else:
            bleus = [r.bleu for r in results if r.span == span and r.format == fmt and not r.errored]
            rouges = [r.rouge_l for r in results if r.span == span and r.format == fmt and not r.errored]
            cell.mean_bleu = sum(bleus) / len(bleus) if bleus else None
            cell.mean_rouge_l = sum(rouges) / len(rouges) if rouges else None

    ordered_cells = [cells[key] for key in sorted(cells)]
    return BenchReport(
        pipeline=pipeline_name,
        cells=ordered_cells,
        results=results,
        n_total=len(results),
        n_errored=sum(1 for r in results if r.errored),
    )


def mcq_query(qa: QAPair) -> str:
    """The text a pipeline should be asked for a benchmark question:
    the bare question for free_text, question plus options for mcq."""
    return qa.rendered_question()


def save_report(report: BenchReport, json_path: str | Path, md_path: str | Path | None = None) -> None:
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, sort_keys=True, indent=2, ensure_ascii=False)
        fh.write("\n")
    if md_path is not None:
        Path(md_path).write_text(report.render_markdown(), encoding="utf-8")
