"""Corpus-free text overlap metrics.

BLEU uses modified n-gram precision with per-reference clipping and the
brevity penalty; no smoothing is applied, so a zero precision at any
order zeroes the score. ROUGE-L is the LCS-based F-measure with the
recall-leaning beta weighting.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .chunking import tokenize


class EmptyCandidate(ValueError):
    pass


class EmptyReferenceSet(ValueError):
    pass


@dataclass(frozen=True)
class BleuConfig:
    max_order: int = 4
    weights: tuple[float, ...] | None = None  # defaults to uniform 1/max_order

    def resolved_weights(self) -> tuple[float, ...]:
        if self.weights is None:
            return tuple(1.0 / self.max_order for _ in range(self.max_order))
        if len(self.weights) != self.max_order:
            raise ValueError("weights length must equal max_order")
        return tuple(self.weights)


@dataclass(frozen=True)
class BleuBreakdown:
    score: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    candidate_length: int
    reference_length: int


@dataclass(frozen=True)
class RougeLBreakdown:
    score: float
    recall: float
    precision: float
    lcs_length: int


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _closest_reference_length(candidate_len: int, reference_lens: Sequence[int]) -> int:
    # closest to the candidate; ties broken toward the shorter reference
    return min(reference_lens, key=lambda r: (abs(r - candidate_len), r))


def bleu(candidate: str, references: Sequence[str], config: BleuConfig | None = None) -> BleuBreakdown:
    """Multi-reference BLEU over whitespace/punctuation tokens.

    Args:
        candidate: candidate text, must be non-empty.
        references: one or more reference texts.
        config: n-gram order and weights; default order 4, uniform.

    Returns:
        BleuBreakdown with the score and its components.

    Raises:
        EmptyCandidate: candidate has no tokens.
        EmptyReferenceSet: no references, or none with tokens.
    """
    cfg = config or BleuConfig()
    cand = tokenize(candidate)
    if not cand:
        raise EmptyCandidate("candidate text has no tokens")
    refs = [tokenize(r) for r in references]
    refs = [r for r in refs if r]
    if not refs:
        raise EmptyReferenceSet("at least one non-empty reference is required")

    c = len(cand)
    r = _closest_reference_length(c, [len(ref) for ref in refs])
    bp = 1.0 if c > r else math.exp(1.0 - r / c)

    precisions: list[float] = []
    for n in range(1, cfg.max_order + 1):
        cand_counts = _ngrams(cand, n)
        total = sum(cand_counts.values())
        if total == 0:
            precisions.append(0.0)
            continue
        max_ref_counts: Counter = Counter()
        for ref in refs:
            for gram, count in _ngrams(ref, n).items():
                if count > max_ref_counts[gram]:
                    max_ref_counts[gram] = count
        clipped = sum(min(count, max_ref_counts[gram]) for gram, count in cand_counts.items())
        precisions.append(clipped / total)

    weights = cfg.resolved_weights()
    if any(p == 0.0 for p in precisions):
        score = 0.0
    else:
        score = bp * math.exp(sum(w * math.log(p) for w, p in zip(weights, precisions)))
    return BleuBreakdown(
        score=score,
        precisions=tuple(precisions),
        brevity_penalty=bp,
        candidate_length=c,
        reference_length=r,
    )


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Token-level longest common subsequence length via standard DP."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                curr.append(prev[j - 1] + 1)
            else:
                curr.append(max(prev[j], curr[j - 1]))
        prev = curr
    return prev[-1]


def rouge_l(candidate: str, reference: str, beta: float = 1.2) -> RougeLBreakdown:
    """ROUGE-L F-measure.

    Recall is LCS over the reference length, precision is LCS over the
    candidate length, combined as (1+b^2)RP / (R + b^2 P); zero when
    both components are zero.
    """
    ref = tokenize(reference)
    cand = tokenize(candidate)
    if not ref:
        raise EmptyReferenceSet("reference text has no tokens")
    if not cand:
        raise EmptyCandidate("candidate text has no tokens")
    lcs = lcs_length(ref, cand)
    recall = lcs / len(ref)
    precision = lcs / len(cand)
    if recall == 0.0 and precision == 0.0:
        score = 0.0
    else:
        score = (1 + beta**2) * recall * precision / (recall + beta**2 * precision)
    return RougeLBreakdown(score=score, recall=recall, precision=precision, lcs_length=lcs)


def rouge_l_best(candidate: str, references: Sequence[str], beta: float = 1.2) -> RougeLBreakdown:
    """ROUGE-L against a reference set: the best single-reference score."""
    refs = [r for r in references if tokenize(r)]
    if not refs:
        raise EmptyReferenceSet("at least one non-empty reference is required")
    return max((rouge_l(candidate, ref, beta) for ref in refs), key=lambda b: b.score)
