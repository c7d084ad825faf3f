"""Ingestion of labeled text corpora stored as newline-delimited JSON.

One record per line with fields ``id``, ``text``, ``label`` (0 = human,
1 = machine, optional), ``model``, ``source`` and ``language`` (optional).
Unknown fields are preserved verbatim in ``Document.metadata``.
"""

from __future__ import annotations

import enum
import json
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from .errors import DuplicateId, MalformedRecord

_KNOWN_FIELDS = ("id", "text", "label", "model", "source", "language")


class Label(enum.IntEnum):
    HUMAN = 0
    MACHINE = 1


@dataclass(frozen=True)
class Document:
    """One corpus record. Text is stored trimmed; everything else verbatim."""

    id: str
    text: str
    label: Optional[Label] = None
    language: Optional[str] = None
    generator: Optional[str] = None
    source: Optional[str] = None
    metadata: dict = field(default_factory=dict)


@dataclass
class SkipReport:
    line_no: int
    reason: str


def _parse_label(value, line_no: int) -> Optional[Label]:
    if value is None:
        return None
    # bool is an int subclass; JSON true/false is not a valid label here
    if isinstance(value, bool) or not isinstance(value, int) or value not in (0, 1):
        raise MalformedRecord(line_no, f"label must be 0 or 1, got {value!r}")
    return Label(value)


def _parse_language(value, line_no: int) -> Optional[str]:
    if value is None:
        return None
    if not isinstance(value, str) or not (2 <= len(value) <= 3) or not value.isalpha():
        raise MalformedRecord(line_no, f"language must be a 2-3 letter code, got {value!r}")
    return value.lower()


def parse_record(raw: str, line_no: int, default_id: str) -> Document:
    """Parse one JSONL line into a Document, raising MalformedRecord on bad input."""
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(line_no, f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedRecord(line_no, "record is not a JSON object")

    text = obj.get("text")
    if not isinstance(text, str):
        raise MalformedRecord(line_no, "missing or non-string text")
    text = text.strip()
    if not text:
        raise MalformedRecord(line_no, "empty text")

    doc_id = obj.get("id", default_id)
    if isinstance(doc_id, int) and not isinstance(doc_id, bool):
        doc_id = str(doc_id)  # tolerate integer ids seen in some dumps
    if not isinstance(doc_id, str) or not doc_id:
        raise MalformedRecord(line_no, f"invalid id {obj.get('id')!r}")

    generator = obj.get("model")
    source = obj.get("source")
    for name, value in (("model", generator), ("source", source)):
        if value is not None and not isinstance(value, str):
            raise MalformedRecord(line_no, f"non-string {name} field")

    metadata = {k: v for k, v in obj.items() if k not in _KNOWN_FIELDS}
    return Document(
        id=doc_id,
        text=text,
        label=_parse_label(obj.get("label"), line_no),
        language=_parse_language(obj.get("language"), line_no),
        generator=generator,
        source=source,
        metadata=metadata,
    )


def document_to_json(doc: Document) -> str:
    """Serialize a Document back to a single JSONL line (round-trips parse_record)."""
    obj = {"id": doc.id, "text": doc.text}
    if doc.label is not None:
        obj["label"] = int(doc.label)
    if doc.generator is not None:
        obj["model"] = doc.generator
    if doc.source is not None:
        obj["source"] = doc.source
    if doc.language is not None:
        obj["language"] = doc.language
    obj.update(doc.metadata)
    return json.dumps(obj, ensure_ascii=False)


class JsonlCorpusReader:
    """Streaming reader over a JSONL corpus file.

    Iterating yields Documents in file order. With ``strict=False`` (default)
    malformed lines and duplicate ids are collected into ``self.skipped`` and
    iteration continues; with ``strict=True`` the first bad line raises.

    Memory: document text is never accumulated; only the set of seen ids is
    kept for duplicate detection.
    """

    def __init__(self, path: str, strict: bool = False):
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        self.path = path
        self.strict = strict
        self.skipped: list[SkipReport] = []
        self.n_yielded = 0

    def __iter__(self) -> Iterator[Document]:
        name = os.path.basename(self.path)
        seen: set[str] = set()
        # utf-8-sig: tolerate a BOM; newline="" keeps CRLF handling to us
        with open(self.path, "r", encoding="utf-8-sig", newline="") as fh:
            for line_no, raw in enumerate(fh, start=1):
                raw = raw.rstrip("\r\n")
                if not raw.strip():
                    continue
                try:
                    doc = parse_record(raw, line_no, default_id=f"{name}#{line_no}")
                    if doc.id in seen:
                        raise DuplicateId(line_no, doc.id)
                except MalformedRecord as exc:
                    if self.strict:
                        raise
                    self.skipped.append(SkipReport(exc.line_no, exc.reason))
                    continue
                seen.add(doc.id)
                self.n_yielded += 1
                yield doc


def load_corpus(path: str, format: str = "jsonl", strict: bool = False) -> JsonlCorpusReader:
    """Open a corpus for streaming. Only the ``jsonl`` format exists."""
    if format != "jsonl":
        raise ValueError(f"unsupported corpus format {format!r}")
    return JsonlCorpusReader(path, strict=strict)


@dataclass
class CorpusStats:
    total: int
    labels: dict
    languages: dict
    generators: dict
    word_counts: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "total": self.total,
                "labels": self.labels,
                "languages": self.languages,
                "generators": self.generators,
                "word_counts": self.word_counts,
            },
            ensure_ascii=False,
        )


def _quantile(xs: list, q: float) -> float:
    # xs sorted ascending; linear interpolation between order statistics
    pos = q * (len(xs) - 1)
    lo = math.floor(pos)
    hi = math.ceil(pos)
    if lo == hi:
        return float(xs[lo])
    frac = pos - lo
    return float(xs[lo]) * (1.0 - frac) + float(xs[hi]) * frac


def corpus_stats(docs: Iterable[Document]) -> CorpusStats:
    """Count labels/languages/generators and summarize whitespace-token counts."""
    labels = Counter()
    languages = Counter()
    generators = Counter()
    lengths: list[int] = []
    total = 0
    for doc in docs:
        total += 1
        if doc.label is None:
            labels["unlabeled"] += 1
        else:
            labels[doc.label.name.lower()] += 1
        languages[doc.language or "unknown"] += 1
        generators[doc.generator or "unknown"] += 1
        lengths.append(len(doc.text.split()))

    lengths.sort()
    if lengths:
        wc = {
            "min": float(lengths[0]),
            "q25": _quantile(lengths, 0.25),
            "median": _quantile(lengths, 0.50),
            "q75": _quantile(lengths, 0.75),
            "max": float(lengths[-1]),
        }
    else:
        wc = {"min": None, "q25": None, "median": None, "q75": None, "max": None}
    return CorpusStats(
        total=total,
        labels=dict(labels),
        languages=dict(languages),
        generators=dict(generators),
        word_counts=wc,
    )
