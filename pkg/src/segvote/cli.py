"""Command line entry point: segment / train / detect / evaluate.

All data flows through JSONL files; progress and logs go to stderr so
stdout stays clean for piped data. Every run with the same inputs, flags
and --seed produces byte-identical output files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .corpus import Document, Label, corpus_stats, load_corpus
from .ensemble import VotingConfig, VotingScheme, vote
from .errors import SegvoteError
from .evaluation import (
    compute_metrics,
    count_pairs,
    join_gold,
    render_confusion_csv,
    render_confusion_table,
    render_report_text,
    report_from_counts,
    report_to_dict,
    slice_report,
)
from .scoring import (
    NgramScorerModel,
    NgramTrainConfig,
    connect_external_scorer,
    score_segment,
    train_ngram_scorer,
)
from .segmenter import SegmenterConfig, segment_text, segment_to_dict
from .syntax import (
    PretaggedReader,
    SyntaxConfig,
    SyntaxTrainConfig,
    UposSequence,
    forward,
    gradient_check,
    init_syntax_model,
    load_syntax_model,
    save_syntax_model,
    tag_documents,
    train_syntax,
)

log = logging.getLogger("segvote")


def _configure_logging() -> None:
    level = os.environ.get("SEGVOTE_LOG", "WARNING").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _write_lines(path: str, lines) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


def _report_skips(reader) -> None:
    for skip in reader.skipped:
        log.warning("skipped %s: %s", getattr(skip, "line_no", getattr(skip, "doc_id", "?")), skip.reason)
    if reader.skipped:
        print(f"segvote: skipped {len(reader.skipped)} malformed line(s)", file=sys.stderr)


def cmd_stats(args) -> int:
    reader = load_corpus(args.infile, strict=args.strict)
    stats = corpus_stats(iter(reader))
    _report_skips(reader)
    payload = stats.to_json()
    if args.out:
        _write_lines(args.out, [payload])
    else:
        print(payload)
    return 0


def _segmenter_config(args) -> SegmenterConfig:
    return SegmenterConfig(arabic_question_mark=getattr(args, "arabic_question_mark", False))


def cmd_segment(args) -> int:
    cfg = _segmenter_config(args)
    reader = load_corpus(args.infile, strict=args.strict)

    def lines():
        for doc in reader:
            for seg in segment_text(doc, cfg):
                yield json.dumps(segment_to_dict(seg), ensure_ascii=False)

    _write_lines(args.out, lines())
    _report_skips(reader)
    return 0


def cmd_train_scorer(args) -> int:
    cfg = NgramTrainConfig(
        n_low=args.n_low,
        n_high=args.n_high,
        dim=args.dim,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        l2=args.l2,
        seed=args.seed,
    )
    seg_cfg = _segmenter_config(args)
    reader = load_corpus(args.infile, strict=args.strict)

    def pairs():
        unlabeled = 0
        for doc in reader:
            if doc.label is None:
                unlabeled += 1
                continue
            for seg in segment_text(doc, seg_cfg):
                yield seg, int(doc.label)
        if unlabeled:
            print(f"segvote: ignored {unlabeled} unlabeled document(s)", file=sys.stderr)

    model = train_ngram_scorer(pairs(), cfg)
    _report_skips(reader)
    model.save(args.out)
    trace = model.meta["loss_trace"]
    print(
        f"segvote: trained on {model.meta['n_train']} segments, "
        f"loss {trace[0]:.4f} -> {trace[-1]:.4f}",
        file=sys.stderr,
    )
    return 0


def _load_scorer(selector: str, timeout: float):
    if selector.startswith("builtin:"):
        return NgramScorerModel.load(selector[len("builtin:"):])
    return connect_external_scorer(selector, timeout)


def cmd_detect(args) -> int:
    voting = VotingConfig(scheme=VotingScheme(args.scheme), threshold=args.threshold)
    seg_cfg = _segmenter_config(args)
    reader = load_corpus(args.infile, strict=args.strict)

    is_external = not args.scorer.startswith("builtin:")
    shared_scorer = None if is_external else _load_scorer(args.scorer, args.timeout)
    local = threading.local()
    handles = []
    handles_lock = threading.Lock()

    def get_scorer():
        if shared_scorer is not None:
            return shared_scorer
        scorer = getattr(local, "scorer", None)
        if scorer is None:
            scorer = _load_scorer(args.scorer, args.timeout)
            with handles_lock:
                handles.append(scorer)
            local.scorer = scorer
        return scorer

    def verdict_line(doc: Document) -> str:
        scorer = get_scorer()
        segments = segment_text(doc, seg_cfg)
        scores = [score_segment(scorer, seg) for seg in segments]
        weights = [seg.word_count for seg in segments]
        verdict = vote(scores, voting, weights=weights)
        return json.dumps(
            {
                "doc_id": doc.id,
                "predicted": int(verdict.predicted),
                "aggregate": verdict.aggregate,
                "scheme": verdict.scheme.value,
                "threshold": verdict.threshold,
                "segments": [
                    {"index": s.index, "p_machine": s.p_machine, "weight": w}
                    for s, w in zip(scores, weights)
                ],
            },
            ensure_ascii=False,
        )

    try:
        if args.workers > 1:
            with ThreadPoolExecutor(max_workers=args.workers) as pool:
                _write_lines(args.out, pool.map(verdict_line, reader))
        else:
            _write_lines(args.out, (verdict_line(doc) for doc in reader))
    finally:
        if shared_scorer is None:
            for handle in handles:
                handle.close()
    _report_skips(reader)
    return 0


def _read_verdicts(path: str) -> list[tuple[str, Label]]:
    predictions = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            obj = json.loads(raw)
            predictions.append((obj["doc_id"], Label(int(obj["predicted"]))))
    return predictions


def cmd_evaluate(args) -> int:
    predictions = _read_verdicts(args.verdicts)
    reader = load_corpus(args.gold, strict=args.strict)
    documents = {doc.id: doc for doc in reader}
    _report_skips(reader)

    pairs = [(pred, gold) for pred, gold, _ in join_gold(predictions, documents)]
    counts = count_pairs(pairs)
    if counts.total == 0:
        compute_metrics(pairs)  # raises EmptyEvaluation
    slices = slice_report(predictions, documents, args.slice) if args.slice else None
    report = report_from_counts(counts, slices=slices)

    payload = json.dumps(report_to_dict(report), ensure_ascii=False, indent=2)
    if args.out:
        _write_lines(args.out, [payload])
    else:
        print(payload)
    if args.csv:
        _write_lines(args.csv, [render_confusion_csv(counts).rstrip("\n")])
    print(render_confusion_table(counts), file=sys.stderr, end="")
    print(render_report_text(report), file=sys.stderr, end="")
    return 0


def _read_tagged(path: str, strict: bool, max_len: int):
    reader = PretaggedReader(path, strict=strict, max_len=max_len)
    rows = list(reader)
    for skip in reader.skipped:
        log.warning("skipped %s: %s", skip.doc_id, skip.reason)
    if reader.skipped:
        print(f"segvote: skipped {len(reader.skipped)} bad row(s)", file=sys.stderr)
    return rows


def cmd_train_syntax(args) -> int:
    model_cfg = SyntaxConfig(
        embed_dim=args.embed_dim, hidden=args.hidden, layers=args.layers, max_len=args.max_len
    )
    train_cfg = SyntaxTrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        clip_norm=args.clip_norm,
        seed=args.seed,
        val_fraction=args.val_fraction,
    )
    rows = _read_tagged(args.infile, args.strict, args.max_len)
    labeled = [(seq, int(label)) for seq, label in rows if label is not None]
    dropped = len(rows) - len(labeled)
    if dropped:
        print(f"segvote: ignored {dropped} unlabeled row(s)", file=sys.stderr)
    val_data = None
    if args.val:
        val_rows = _read_tagged(args.val, args.strict, args.max_len)
        val_data = [(seq, int(label)) for seq, label in val_rows if label is not None]

    model, trace = train_syntax(labeled, model_cfg, train_cfg, val_data=val_data)
    for entry in trace:
        line = f"epoch {entry['epoch']}: train_loss={entry['train_loss']:.4f} train_acc={entry['train_acc']:.3f}"
        if "val_loss" in entry:
            line += f" val_loss={entry['val_loss']:.4f} val_acc={entry['val_acc']:.3f}"
        print(line, file=sys.stderr)
    save_syntax_model(model, args.out)
    if args.trace_out:
        _write_lines(args.trace_out, [json.dumps(trace)])
    return 0


def cmd_detect_syntax(args) -> int:
    model = load_syntax_model(args.model)
    if args.tagger:
        reader = load_corpus(args.infile, strict=args.strict)
        sequences, skipped = tag_documents(reader, args.tagger, timeout=args.timeout,
                                           max_len=model.config.max_len)
        _report_skips(reader)
        for skip in skipped:
            log.warning("tagger skipped %s: %s", skip.doc_id, skip.reason)
        if skipped:
            print(f"segvote: tagger failed on {len(skipped)} document(s)", file=sys.stderr)
    else:
        rows = _read_tagged(args.infile, args.strict, model.config.max_len)
        sequences = [seq for seq, _ in rows]

    def lines():
        for seq in sequences:
            p = forward(model, seq).p_machine
            yield json.dumps(
                {
                    "doc_id": seq.doc_id,
                    "predicted": int(p > args.threshold),
                    "p_machine": p,
                    "threshold": args.threshold,
                },
                ensure_ascii=False,
            )

    _write_lines(args.out, lines())
    return 0


def cmd_gradcheck(args) -> int:
    worst_overall = 0.0
    failed = False
    for trial in range(args.trials):
        seed = args.seed + trial
        rng = np.random.default_rng(seed)
        cfg = SyntaxConfig(embed_dim=2, hidden=2, layers=2, max_len=16)
        model = init_syntax_model(cfg, seed=seed)
        ids = tuple(int(v) for v in rng.integers(0, 18, size=3))
        gold = int(rng.integers(0, 2))
        errors = gradient_check(model, UposSequence(doc_id=f"gc{trial}", ids=ids), gold, eps=args.eps)
        worst = max(errors.values())
        worst_overall = max(worst_overall, worst)
        status = "ok" if worst < args.tol else "FAIL"
        print(f"seed {seed}: max relative error {worst:.3e} [{status}]")
        if worst >= args.tol:
            failed = True
            for key, err in sorted(errors.items(), key=lambda kv: -kv[1]):
                if err >= args.tol:
                    print(f"  {key}: {err:.3e}", file=sys.stderr)
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segvote",
        description="Detect machine-generated text by scoring segments and voting.",
    )
    parser.add_argument("--version", action="version", version=f"segvote {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, out_required=True):
        p.add_argument("--in", dest="infile", required=True, help="input JSONL corpus")
        if out_required:
            p.add_argument("--out", required=True, help="output file")
        p.add_argument("--strict", action="store_true", help="abort on the first malformed record")

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("segment", help="split documents into segments")
    add_common(p)
    p.add_argument("--arabic-question-mark", action="store_true",
                   help="also split at the Arabic question mark")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train-scorer", help="train the built-in n-gram scorer")
    add_common(p)
    p.add_argument("--n-low", type=int, default=2)
    p.add_argument("--n-high", type=int, default=4)
    p.add_argument("--dim", type=int, default=1 << 18)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--arabic-question-mark", action="store_true")
    p.set_defaults(func=cmd_train_scorer)

    p = sub.add_parser("detect", help="segment, score and vote per document")
    add_common(p)
    p.add_argument("--scorer", required=True,
                   help="builtin:MODEL.json | exec:CMD | tcp:HOST:PORT")
    p.add_argument("--scheme", choices=[s.value for s in VotingScheme], default="soft")
    p.add_argument("--threshold", type=float, default=0.95)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timeout", type=float, default=10.0)
    p.add_argument("--arabic-question-mark", action="store_true")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="metrics from verdicts plus gold labels")
    p.add_argument("--verdicts", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--csv", default=None, help="write the confusion matrix as CSV")
    p.add_argument("--slice", choices=["language", "generator", "source"], default=None)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("train-syntax", help="train the POS-sequence classifier")
    add_common(p)
    p.add_argument("--val", default=None, help="validation rows (JSONL with tags)")
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--max-len", type=int, default=512)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--trace-out", default=None, help="write the loss trace as JSON")
    p.set_defaults(func=cmd_train_syntax)

    p = sub.add_parser("detect-syntax", help="classify pre-tagged POS rows")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--tagger", default=None,
                   help="exec:CMD | tcp:HOST:PORT tagger; --in is then a corpus")
    p.add_argument("--timeout", type=float, default=10.0)
    p.set_defaults(func=cmd_detect_syntax)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except (SegvoteError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"segvote: error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
