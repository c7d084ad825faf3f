"""Combine per-segment machine-probabilities into one document verdict.

Three schemes: soft (mean probability), hard (strict majority of
per-segment votes) and weighted soft (word-count weighted mean). All
threshold comparisons are strict, with ties resolving to Human.

Aggregates are computed in exact rational arithmetic over the incoming
float values (every float is a dyadic rational, so integer math suffices)
so that a mean landing exactly on the threshold is a tie, not a rounding
accident; the reported aggregate is the correctly rounded float of that
exact value.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

from .corpus import Document, Label
from .errors import EmptyScores, WeightMismatch
from .scoring import Scorer, SegmentScore, score_segment
from .segmenter import SegmenterConfig, segment_text


class VotingScheme(str, enum.Enum):
    SOFT = "soft"
    HARD = "hard"
    WEIGHTED_SOFT = "wsoft"


DEFAULT_THRESHOLD = 0.95


@dataclass(frozen=True)
class VotingConfig:
    scheme: VotingScheme = VotingScheme.SOFT
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        _check_threshold(self.threshold)


@dataclass
class Verdict:
    doc_id: str
    predicted: Label
    aggregate: float
    scheme: VotingScheme
    threshold: float
    segment_scores: list[SegmentScore]
    segment_weights: Optional[list[int]] = None


def _check_threshold(threshold: float) -> None:
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")


def _check_nonempty(scores: Sequence[SegmentScore]) -> None:
    if not scores:
        raise EmptyScores("no segment scores to vote on")


def _label(is_machine: bool) -> Label:
    return Label.MACHINE if is_machine else Label.HUMAN


def _exact_weighted_sum(ps: Sequence[float], weights: Optional[Sequence[int]]) -> tuple[int, int]:
    """Sum of w*p as an exact integer ratio (num, den); den is a power of two."""
    ratios = [p.as_integer_ratio() for p in ps]
    den = max(d for _, d in ratios)
    if weights is None:
        num = sum(n * (den // d) for n, d in ratios)
    else:
        num = sum(w * n * (den // d) for w, (n, d) in zip(weights, ratios))
    return num, den


def _decide_mean(ps: Sequence[float], weights: Optional[Sequence[int]],
                 threshold: float) -> tuple[bool, float]:
    """Exact strict comparison of the (weighted) mean against the threshold.

    Returns (is_machine, aggregate); the aggregate is the correctly rounded
    float of the exact mean (int/int true division rounds correctly).
    """
    num, den = _exact_weighted_sum(ps, weights)
    total = len(ps) if weights is None else sum(weights)
    t_num, t_den = threshold.as_integer_ratio()
    # num / (den * total) > t_num / t_den, all denominators positive
    is_machine = num * t_den > t_num * den * total
    return is_machine, num / (den * total)


def vote_soft(scores: Sequence[SegmentScore], threshold: float = DEFAULT_THRESHOLD) -> Verdict:
    """Machine iff the mean of p_machine is strictly above the threshold."""
    _check_nonempty(scores)
    _check_threshold(threshold)
    is_machine, aggregate = _decide_mean([s.p_machine for s in scores], None, threshold)
    return Verdict(
        doc_id=scores[0].doc_id,
        predicted=_label(is_machine),
        aggregate=aggregate,
        scheme=VotingScheme.SOFT,
        threshold=threshold,
        segment_scores=list(scores),
    )


def vote_hard(scores: Sequence[SegmentScore], threshold: float = DEFAULT_THRESHOLD) -> Verdict:
    """A segment votes machine iff p_machine > threshold; Machine iff strictly
    more than half the segments vote machine."""
    _check_nonempty(scores)
    _check_threshold(threshold)
    votes = sum(1 for s in scores if s.p_machine > threshold)
    n = len(scores)
    return Verdict(
        doc_id=scores[0].doc_id,
        predicted=_label(2 * votes > n),
        aggregate=votes / n,
        scheme=VotingScheme.HARD,
        threshold=threshold,
        segment_scores=list(scores),
    )


def vote_weighted_soft(
    scores: Sequence[SegmentScore],
    weights: Sequence[int],
    threshold: float = DEFAULT_THRESHOLD,
) -> Verdict:
    """Soft voting with per-segment weights (word counts, each >= 1)."""
    _check_nonempty(scores)
    _check_threshold(threshold)
    if len(weights) != len(scores):
        raise WeightMismatch(f"{len(weights)} weights for {len(scores)} scores")
    for w in weights:
        if isinstance(w, bool) or not isinstance(w, int) or w < 1:
            raise WeightMismatch(f"weights must be integers >= 1, got {w!r}")
    is_machine, aggregate = _decide_mean(
        [s.p_machine for s in scores], list(weights), threshold
    )
    return Verdict(
        doc_id=scores[0].doc_id,
        predicted=_label(is_machine),
        aggregate=aggregate,
        scheme=VotingScheme.WEIGHTED_SOFT,
        threshold=threshold,
        segment_scores=list(scores),
        segment_weights=list(weights),
    )


def vote(scores: Sequence[SegmentScore], cfg: VotingConfig,
         weights: Optional[Sequence[int]] = None) -> Verdict:
    if cfg.scheme is VotingScheme.SOFT:
        return vote_soft(scores, cfg.threshold)
    if cfg.scheme is VotingScheme.HARD:
        return vote_hard(scores, cfg.threshold)
    if weights is None:
        raise WeightMismatch("weighted soft voting needs word-count weights")
    return vote_weighted_soft(scores, weights, cfg.threshold)


def detect_document(
    doc: Document,
    scorer: Scorer,
    seg_cfg: Optional[SegmenterConfig] = None,
    voting: Optional[VotingConfig] = None,
) -> Verdict:
    """Full pipeline for one document: segment, score each segment, vote."""
    voting = voting or VotingConfig()
    segments = segment_text(doc, seg_cfg)
    if not segments:
        raise EmptyScores(f"document {doc.id!r} produced no segments")
    scores = [score_segment(scorer, seg) for seg in segments]
    weights = [seg.word_count for seg in segments]
    return vote(scores, voting, weights=weights)
