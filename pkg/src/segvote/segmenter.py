"""Split documents into sentence-like segments at terminal punctuation.

Paragraphs (runs of newlines) are segmented independently; within a
paragraph a split happens after every maximal run of marker characters.
Markers stay attached to the segment they terminate. There is no
abbreviation handling: the rule is a plain marker split.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .corpus import Document
from .errors import EmptyDocument

DEFAULT_MARKERS = frozenset(".!?。！？")  # ascii three + fullwidth forms
ARABIC_QUESTION_MARK = "؟"


@dataclass(frozen=True)
class SegmenterConfig:
    markers: frozenset = DEFAULT_MARKERS
    arabic_question_mark: bool = False

    def effective_markers(self) -> frozenset:
        if self.arabic_question_mark:
            return self.markers | {ARABIC_QUESTION_MARK}
        return self.markers


@dataclass(frozen=True)
class Segment:
    """A contiguous unit of a document with its half-open char span."""

    doc_id: str
    index: int
    text: str
    start: int
    end: int
    word_count: int


def word_count(text: str) -> int:
    """Number of maximal non-whitespace runs."""
    return len(text.split())


def _paragraph_spans(text: str) -> list[tuple[int, int]]:
    spans = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        if text[i] == "\n":
            if i > start:
                spans.append((start, i))
            while i < n and text[i] == "\n":
                i += 1
            start = i
        else:
            i += 1
    if start < n:
        spans.append((start, n))
    return spans


def _split_at_markers(text: str, start: int, end: int, markers: frozenset) -> list[tuple[int, int]]:
    """Raw piece spans within [start, end); a piece ends after a marker run."""
    pieces = []
    piece_start = start
    i = start
    while i < end:
        if text[i] in markers:
            while i + 1 < end and text[i + 1] in markers:
                i += 1
            pieces.append((piece_start, i + 1))
            piece_start = i + 1
        i += 1
    if piece_start < end:
        pieces.append((piece_start, end))
    return pieces


def _trim_span(text: str, start: int, end: int) -> tuple[int, int]:
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return start, end


def segment_text(doc: Document, cfg: Optional[SegmenterConfig] = None) -> list[Segment]:
    """Segment a document; returns at least one Segment.

    Raises EmptyDocument if the text trims to nothing. Segments that trim
    to empty (pure whitespace pieces) are dropped and indices re-packed.
    """
    cfg = cfg or SegmenterConfig()
    markers = cfg.effective_markers()
    text = doc.text
    if not text.strip():
        raise EmptyDocument(f"document {doc.id!r} has no content")

    segments: list[Segment] = []
    for p_start, p_end in _paragraph_spans(text):
        for raw_start, raw_end in _split_at_markers(text, p_start, p_end, markers):
            start, end = _trim_span(text, raw_start, raw_end)
            if start == end:
                continue
            piece = text[start:end]
            segments.append(
                Segment(
                    doc_id=doc.id,
                    index=len(segments),
                    text=piece,
                    start=start,
                    end=end,
                    word_count=word_count(piece),
                )
            )
    return segments


def segment_to_dict(seg: Segment) -> dict:
    return {
        "doc_id": seg.doc_id,
        "index": seg.index,
        "text": seg.text,
        "start": seg.start,
        "end": seg.end,
        "word_count": seg.word_count,
    }
