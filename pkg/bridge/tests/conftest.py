"""Bridge test fixtures: a tiny local transformer checkpoint and tiny
segment/corpus files, so nothing touches the network."""

from __future__ import annotations

import json
import os
import random
import subprocess
import sys

import pytest

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_VERBOSITY", "error")
os.environ.setdefault("HF_HUB_DISABLE_PROGRESS_BARS", "1")

BRIDGE_CMD = [sys.executable, "-m", "xlmr_bridge.cli"]


@pytest.fixture(scope="session")
def tiny_base_model(tmp_path_factory):
    """A miniature local BERT checkpoint standing in for a hub model."""
    import torch
    from transformers import BertConfig, BertForSequenceClassification, BertTokenizer

    outdir = tmp_path_factory.mktemp("tiny-base")
    letters = list("abcdefghijklmnopqrstuvwxyz")
    vocab = (
        ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "."]
        + letters
        + ["##" + c for c in letters]
    )
    vocab_path = outdir / "vocab.txt"
    vocab_path.write_text("\n".join(vocab) + "\n", encoding="utf-8")
    tokenizer = BertTokenizer(str(vocab_path))
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=16,
        num_hidden_layers=1,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=64,
        num_labels=2,
    )
    torch.manual_seed(0)
    model = BertForSequenceClassification(config)
    model.save_pretrained(outdir)
    tokenizer.save_pretrained(outdir)
    return str(outdir)


@pytest.fixture(scope="session")
def labeled_segments(tmp_path_factory):
    """~50 segments produced by the primary's segment subcommand, plus the
    gold corpus they came from."""
    outdir = tmp_path_factory.mktemp("segments")
    corpus = str(outdir / "corpus.jsonl")
    segments = str(outdir / "segments.jsonl")

    rng = random.Random(5)
    human_words = ["the", "old", "river", "keeps", "turning", "softly"]
    machine_words = ["zq", "vex", "qux", "jyx", "wyz", "zorq"]
    with open(corpus, "w", encoding="utf-8") as fh:
        for i in range(13):
            for label, words in ((0, human_words), (1, machine_words)):
                text = ". ".join(
                    " ".join(rng.choice(words) for _ in range(4)) for _ in range(2)
                ) + "."
                fh.write(json.dumps({"id": f"d{label}{i}", "text": text, "label": label}) + "\n")

    proc = subprocess.run(
        [sys.executable, "-m", "segvote.cli", "segment", "--in", corpus, "--out", segments],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    n = sum(1 for _ in open(segments, encoding="utf-8"))
    assert n >= 50
    return segments, corpus
