"""Acceptance suite: each test exercises one exit criterion at its stated
tolerance and prints a PASS line on success."""

import itertools
import json
import math
import os
import random
import sys
import time
from fractions import Fraction

import pytest

from conftest import grammar_dataset, synth_documents, write_corpus
from segvote.cli import main
from segvote.corpus import Document, Label
from segvote.ensemble import (
    VotingConfig,
    VotingScheme,
    vote_hard,
    vote_soft,
    vote_weighted_soft,
)
from segvote.errors import (
    HandshakeTimeout,
    ScorerProtocolError,
    ScorerUnavailable,
    VersionMismatch,
)
from segvote.evaluation import f1_score, report_from_counts, Counts
from segvote.scoring import (
    NgramTrainConfig,
    SegmentScore,
    connect_external_scorer,
    train_ngram_scorer,
)
from segvote.segmenter import segment_text, word_count
from segvote.syntax import (
    SyntaxConfig,
    SyntaxTrainConfig,
    UposSequence,
    gradient_check,
    init_syntax_model,
    train_syntax,
    upos_encode,
)

TESTS_DIR = os.path.dirname(__file__)
FAKE_SCORER = os.path.join(TESTS_DIR, "fake_scorer.py")


def ok(name):
    print(f"acceptance {name}: PASS")


GRID = (0.0, 0.25, 0.5, 0.75, 0.9, 0.96, 1.0)
WEIGHT_GRID = (1, 2, 5)
TAU = 0.95


def _score(i, p):
    if p <= 0.0:
        return SegmentScore("d", i, 0.0, -1e9, "t")
    if p >= 1.0:
        return SegmentScore("d", i, 1.0, 1e9, "t")
    return SegmentScore("d", i, p, math.log(p / (1 - p)), "t")


def test_voting_oracle_equivalence():
    """All three schemes match an exact-fraction brute-force evaluator on the
    full grid (scores from the 7-value grid, n <= 4; weights from {1,2,5})."""
    start = time.monotonic()
    score_cache = {(i, p): _score(i, p) for i in range(4) for p in GRID}
    frac = {p: Fraction(p) for p in GRID}
    tau_f = Fraction(TAU)
    half = Fraction(1, 2)

    cases = 0
    # (scores tuple, exact sum) pairs, grown one position at a time
    level = [((), Fraction(0))]
    for n in range(1, 5):
        level = [
            (ps + (p,), s + frac[p])
            for ps, s in level
            for p in GRID
        ]
        for ps, exact_sum in level:
            scores = [score_cache[(i, p)] for i, p in enumerate(ps)]

            verdict = vote_soft(scores, TAU)
            mean = exact_sum / n
            assert (verdict.predicted is Label.MACHINE) == (mean > tau_f)
            assert verdict.aggregate == float(mean)

            verdict = vote_hard(scores, TAU)
            votes = sum(1 for p in ps if frac[p] > tau_f)
            assert (verdict.predicted is Label.MACHINE) == (Fraction(votes, n) > half)
            assert verdict.aggregate == float(Fraction(votes, n))
            cases += 2

        # weighted: grow (scores, weights, exact weighted sum, weight total)
        wlevel = [((), (), Fraction(0), 0)]
        for _ in range(n):
            wlevel = [
                (ps + (p,), ws + (w,), s + w * frac[p], wt + w)
                for ps, ws, s, wt in wlevel
                for p in GRID
                for w in WEIGHT_GRID
            ]
        for ps, ws, wsum, wtotal in wlevel:
            scores = [score_cache[(i, p)] for i, p in enumerate(ps)]
            verdict = vote_weighted_soft(scores, list(ws), TAU)
            mean = wsum / wtotal
            assert (verdict.predicted is Label.MACHINE) == (mean > tau_f)
            assert verdict.aggregate == float(mean)
            cases += 1

    elapsed = time.monotonic() - start
    assert cases == 2 * (7 + 49 + 343 + 2401) + (21 + 441 + 9261 + 194481)
    assert elapsed < 5.0, f"oracle sweep took {elapsed:.1f}s"
    ok(f"voting-oracle-equivalence ({cases} cases, {elapsed:.1f}s)")


def test_scheme_boundary_semantics():
    """Exact boundary behavior, no tolerances."""
    v = vote_soft([_score(0, 0.95)], 0.95)
    assert v.predicted is Label.HUMAN
    assert v.aggregate == 0.95

    v = vote_hard([_score(0, 0.99), _score(1, 0.10)], 0.95)
    assert v.predicted is Label.HUMAN

    witness = [_score(0, 0.96), _score(1, 0.96), _score(2, 0.00)]
    assert vote_soft(witness, 0.95).predicted is Label.HUMAN
    assert vote_hard(witness, 0.95).predicted is Label.MACHINE
    ok("scheme-boundary-semantics")


def test_published_metric_formula_consistency():
    """The metric formulas reproduce the published headline numbers."""
    assert f1_score(0.854, 0.853) == pytest.approx(0.853, abs=0.001)
    assert 1 - (0.159 + 0.147) / 2 == pytest.approx(0.847, abs=0.0005)
    # same identity through the report type on an equal-class-size fixture
    report = report_from_counts(Counts(tp=853, fn=147, fp=159, tn=841))
    assert report.accuracy == pytest.approx(1 - (report.fpr + report.fnr) / 2, abs=1e-12)
    assert report.accuracy == pytest.approx(0.847, abs=0.0005)
    ok("published-metric-formula-consistency")


def test_segmentation_round_trip_1000_documents():
    """Span concatenation reproduces the source text modulo the whitespace
    between segments; zero violations over 1,000 generated ASCII docs."""
    rng = random.Random(404)
    violations = 0
    for i in range(1000):
        words = [
            "".join(rng.choice("abcdefgh") for _ in range(rng.randint(1, 8)))
            for _ in range(rng.randint(1, 40))
        ]
        text = ""
        for w in words:
            text += w
            r = rng.random()
            if r < 0.3:
                text += rng.choice(".!?") + (" " if rng.random() < 0.8 else "")
            elif r < 0.38:
                text += "\n" * rng.randint(1, 3)
            else:
                text += " " * rng.randint(1, 2)
        if not text.strip():
            continue
        doc = Document(id=f"rt{i}", text=text.strip())
        segments = segment_text(doc)
        cursor = 0
        joined = []
        for seg in segments:
            if doc.text[cursor:seg.start].strip() != "":
                violations += 1
            if doc.text[seg.start:seg.end] != seg.text:
                violations += 1
            joined.append(seg.text)
            cursor = seg.end
        if doc.text[cursor:].strip() != "":
            violations += 1
        # concatenation equals the source with inter-segment whitespace removed
        residue = doc.text
        for part in joined:
            head, sep, residue = residue.partition(part)
            if head.strip() or not sep:
                violations += 1
                break
        if residue.strip():
            violations += 1
    assert violations == 0
    ok("segmentation-round-trip (1000 docs, 0 violations)")


def test_builtin_scorer_separability_end_to_end():
    """Two-process character corpus, 2x1000 docs: pipeline accuracy >= 0.95
    at threshold 0.5 under all three schemes, within 60 seconds."""
    start = time.monotonic()
    docs = synth_documents(1000, seed=77)
    train_docs, eval_docs = docs[:1600], docs[1600:]

    pairs = []
    for doc in train_docs:
        for seg in segment_text(doc):
            pairs.append((seg, int(doc.label)))
    model = train_ngram_scorer(pairs, NgramTrainConfig(dim=1 << 16, epochs=3, seed=0))

    correct = {scheme: 0 for scheme in VotingScheme}
    for doc in eval_docs:
        segments = segment_text(doc)
        scores = [
            _score(i, model.score_text(seg.text)) for i, seg in enumerate(segments)
        ]
        weights = [seg.word_count for seg in segments]
        verdicts = {
            VotingScheme.SOFT: vote_soft(scores, 0.5),
            VotingScheme.HARD: vote_hard(scores, 0.5),
            VotingScheme.WEIGHTED_SOFT: vote_weighted_soft(scores, weights, 0.5),
        }
        for scheme, verdict in verdicts.items():
            correct[scheme] += verdict.predicted == doc.label

    elapsed = time.monotonic() - start
    n_eval = len(eval_docs)
    accuracies = {s.value: correct[s] / n_eval for s in VotingScheme}
    for scheme, acc in accuracies.items():
        assert acc >= 0.95, f"{scheme} accuracy {acc}"
    assert elapsed < 60.0, f"separability run took {elapsed:.1f}s"
    ok(f"builtin-scorer-separability ({accuracies}, {elapsed:.1f}s)")


def test_gradient_check_three_seeds():
    """Analytic vs central finite differences on a tiny model: relative error
    < 1e-4 for every parameter block at 3 random seeds, within 10 seconds."""
    start = time.monotonic()
    cfg = SyntaxConfig(embed_dim=2, hidden=2, layers=2, max_len=16)
    worst = 0.0
    for seed in (0, 1, 2):
        rng = random.Random(seed)
        model = init_syntax_model(cfg, seed=seed)
        ids = tuple(rng.randrange(18) for _ in range(3))
        gold = rng.randrange(2)
        errors = gradient_check(model, UposSequence("gc", ids), gold, eps=1e-4)
        assert set(errors) == set(model.params)
        for block, err in errors.items():
            assert err < 1e-4, f"seed {seed} block {block}: {err}"
        worst = max(worst, max(errors.values()))
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"gradient check took {elapsed:.1f}s"
    ok(f"gradient-check (worst {worst:.2e}, {elapsed:.1f}s)")


def test_syntax_learns_grammars_and_stays_at_chance_on_shuffled_labels():
    """Separable tag grammars reach >= 0.9 validation accuracy within 20
    epochs; label-shuffled data stays in [0.4, 0.6]; under 2 minutes."""
    start = time.monotonic()
    rows = [
        (upos_encode(tags, doc_id=f"g{i}"), label)
        for i, (tags, label) in enumerate(grammar_dataset(500, seed=55))
    ]
    cfg = SyntaxConfig(embed_dim=4, hidden=6, layers=2, max_len=32)

    _, trace = train_syntax(rows, cfg, SyntaxTrainConfig(epochs=10, lr=0.5, batch_size=16, seed=0))
    best = max(e["val_acc"] for e in trace)
    assert best >= 0.9, f"separable grammars only reached {best}"

    rng = random.Random(99)
    labels = [label for _, label in rows]
    rng.shuffle(labels)
    shuffled = [(seq, lbl) for (seq, _), lbl in zip(rows, labels)]
    _, trace_shuffled = train_syntax(
        shuffled, cfg, SyntaxTrainConfig(epochs=4, lr=0.5, batch_size=16, seed=0)
    )
    chance = trace_shuffled[-1]["val_acc"]
    assert 0.4 <= chance <= 0.6, f"label-shuffled accuracy {chance} not chance-level"

    elapsed = time.monotonic() - start
    assert elapsed < 120.0, f"syntax runs took {elapsed:.1f}s"
    ok(f"syntax-grammars-vs-shuffled (best {best:.3f}, shuffled {chance:.3f}, {elapsed:.1f}s)")


def test_end_to_end_determinism(tmp_path):
    """The train -> detect -> evaluate pipeline produces byte-identical
    outputs across repeated runs with a fixed seed."""
    train = str(tmp_path / "train.jsonl")
    test = str(tmp_path / "test.jsonl")
    write_corpus(train, synth_documents(12, seed=7, id_prefix="tr"))
    write_corpus(test, synth_documents(10, seed=8, id_prefix="te"))

    outputs = []
    for run in ("one", "two"):
        outdir = tmp_path / run
        outdir.mkdir()
        model = str(outdir / "model.json")
        verdicts = str(outdir / "verdicts.jsonl")
        report = str(outdir / "report.json")
        assert main(["train-scorer", "--in", train, "--out", model,
                     "--dim", "4096", "--epochs", "3", "--seed", "0"]) == 0
        assert main(["detect", "--in", test, "--scorer", f"builtin:{model}",
                     "--scheme", "wsoft", "--threshold", "0.5", "--out", verdicts]) == 0
        assert main(["evaluate", "--verdicts", verdicts, "--gold", test,
                     "--out", report]) == 0
        outputs.append([open(f, "rb").read() for f in (model, verdicts, report)])
    assert outputs[0] == outputs[1]
    ok("end-to-end-determinism")


def test_protocol_robustness():
    """Scripted fake peer: handshake, pipelining, error lines, mid-stream
    death; bounded waits and the right exception for each failure."""
    def cmd(*extra):
        return "exec:" + " ".join([sys.executable, FAKE_SCORER, *extra])

    scorer = connect_external_scorer(cmd(), timeout=5.0)
    assert scorer.scorer_id == "fake"
    texts = [f"0.{i:02d}" for i in range(100)]
    assert scorer.score_texts(texts) == [float(t) for t in texts]  # pipelined, in order
    with pytest.raises(ScorerProtocolError):
        scorer.score_text("boom")
    assert scorer.score_text("0.5") == 0.5
    scorer.close()

    with pytest.raises(VersionMismatch):
        connect_external_scorer(cmd("--mode", "version2"), timeout=5.0)

    started = time.monotonic()
    with pytest.raises(HandshakeTimeout):
        connect_external_scorer(cmd("--sleep-handshake", "30"), timeout=0.5)
    assert time.monotonic() - started < 5.0

    scorer = connect_external_scorer(cmd("--die-after", "1"), timeout=10.0)
    assert scorer.score_text("0.5") == 0.5
    started = time.monotonic()
    with pytest.raises(ScorerUnavailable):
        scorer.score_text("0.5")
    assert time.monotonic() - started < 5.0  # EOF detected, no hang
    scorer.close()
    ok("protocol-robustness")
