"""Binary classification metrics and confusion matrices over verdicts.

Machine is the positive class everywhere in this module; every rendered
report says so. Ratios with a zero denominator are reported as None (and
serialized as null), never coerced to 0 or 1. Values stay full precision
internally; rounding happens only in the text renderers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .corpus import Document, Label
from .errors import EmptyEvaluation, MissingGold

POSITIVE_CLASS = "machine"


@dataclass(frozen=True)
class Counts:
    """Confusion counts; mergeable, so shards can be folded associatively."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            tn=self.tn + other.tn,
            fn=self.fn + other.fn,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    fpr: Optional[float]
    fnr: Optional[float]
    slices: Optional[dict] = None

    @property
    def counts(self) -> Counts:
        return Counts(tp=self.tp, fp=self.fp, tn=self.tn, fn=self.fn)


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den > 0 else None


def f1_score(precision: Optional[float], recall: Optional[float]) -> Optional[float]:
    if precision is None or recall is None or precision + recall == 0.0:
        return None
    return 2.0 * precision * recall / (precision + recall)


def count_pairs(pairs: Iterable[tuple[Label, Label]]) -> Counts:
    """Fold (predicted, gold) pairs into confusion counts."""
    tp = fp = tn = fn = 0
    for predicted, gold in pairs:
        if gold == Label.MACHINE:
            if predicted == Label.MACHINE:
                tp += 1
            else:
                fn += 1
        else:
            if predicted == Label.MACHINE:
                fp += 1
            else:
                tn += 1
    return Counts(tp=tp, fp=fp, tn=tn, fn=fn)


def report_from_counts(c: Counts, slices: Optional[dict] = None) -> MetricsReport:
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    return MetricsReport(
        tp=c.tp,
        fp=c.fp,
        tn=c.tn,
        fn=c.fn,
        accuracy=_ratio(c.tp + c.tn, c.total),
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        fpr=_ratio(c.fp, c.fp + c.tn),
        fnr=_ratio(c.fn, c.fn + c.tp),
        slices=slices,
    )


def compute_metrics(pairs: Iterable[tuple[Label, Label]]) -> MetricsReport:
    counts = count_pairs(pairs)
    if counts.total == 0:
        raise EmptyEvaluation("no (predicted, gold) pairs")
    return report_from_counts(counts)


def join_gold(
    predictions: Iterable[tuple[str, Label]],
    documents: Mapping[str, Document],
) -> list[tuple[Label, Label, Document]]:
    """Attach gold labels to (doc_id, predicted) pairs; raises MissingGold."""
    joined = []
    for doc_id, predicted in predictions:
        doc = documents.get(doc_id)
        if doc is None or doc.label is None:
            raise MissingGold(doc_id)
        joined.append((predicted, doc.label, doc))
    return joined


def slice_report(
    predictions: Iterable[tuple[str, Label]],
    documents: Mapping[str, Document],
    key: str,
) -> dict[str, MetricsReport]:
    """Per-slice metrics, sliced by a document attribute.

    ``key`` is one of language / generator / source; documents without the
    attribute land in the "unknown" slice. Slice counts sum to the global
    counts by construction (each pair goes to exactly one slice).
    """
    if key not in ("language", "generator", "source"):
        raise ValueError(f"unknown slice key {key!r}")
    by_slice: dict[str, list[tuple[Label, Label]]] = {}
    for predicted, gold, doc in join_gold(predictions, documents):
        name = getattr(doc, key) or "unknown"
        by_slice.setdefault(name, []).append((predicted, gold))
    return {
        name: report_from_counts(count_pairs(pairs))
        for name, pairs in sorted(by_slice.items())
    }


def render_confusion_csv(c: Counts) -> str:
    return (
        "gold\\pred,human,machine\n"
        f"human,{c.tn},{c.fp}\n"
        f"machine,{c.fn},{c.tp}\n"
    )


def render_confusion_table(c: Counts) -> str:
    rows = [
        ("", "pred:human", "pred:machine"),
        ("gold:human", str(c.tn), str(c.fp)),
        ("gold:machine", str(c.fn), str(c.tp)),
    ]
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    lines = [
        "  ".join(cell.rjust(widths[i]) if i else cell.ljust(widths[i]) for i, cell in enumerate(row))
        for row in rows
    ]
    return "\n".join(line.rstrip() for line in lines) + "\n"


def report_to_dict(report: MetricsReport, include_header: bool = True) -> dict:
    out: dict = {}
    if include_header:
        out["positive_class"] = POSITIVE_CLASS
    out.update(
        tp=report.tp,
        fp=report.fp,
        tn=report.tn,
        fn=report.fn,
        accuracy=report.accuracy,
        precision=report.precision,
        recall=report.recall,
        f1=report.f1,
        fpr=report.fpr,
        fnr=report.fnr,
    )
    if report.slices is not None:
        out["slices"] = {
            name: report_to_dict(sub, include_header=False)
            for name, sub in report.slices.items()
        }
    return out


def render_report_text(report: MetricsReport) -> str:
    """Human-facing summary, ratios rounded to 3 decimals."""

    def fmt(v: Optional[float]) -> str:
        return "n/a" if v is None else f"{v:.3f}"

    lines = [
        f"positive class: {POSITIVE_CLASS}",
        f"counts: tp={report.tp} fp={report.fp} tn={report.tn} fn={report.fn}",
        f"accuracy={fmt(report.accuracy)} precision={fmt(report.precision)} "
        f"recall={fmt(report.recall)} f1={fmt(report.f1)}",
        f"fpr={fmt(report.fpr)} fnr={fmt(report.fnr)}",
    ]
    return "\n".join(lines) + "\n"
