"""Shared fixtures: synthetic corpora and tag-sequence generators."""

from __future__ import annotations

import json
import random

from segvote.corpus import Document, Label

# Two character-level writing processes with disjoint-looking vocabularies,
# so hashed character n-grams separate them easily.
HUMAN_VOCAB = (
    "the old river keeps turning under grey stone bridges while children "
    "wave morning light soft rain falls over quiet fields near harbor town"
).split()
MACHINE_VOCAB = (
    "zorq vex qux jyx wyz xylo quazy fyzz vyxen zyq plex kwyj yzzy xyq "
    "zzap qwop vyz jyzzy xuq zyxx"
).split()

TERMINATORS = ".!?"


def synth_text(rng: random.Random, vocab: list[str]) -> str:
    paragraphs = []
    for _ in range(rng.randint(1, 3)):
        sentences = []
        for _ in range(rng.randint(1, 3)):
            words = [rng.choice(vocab) for _ in range(rng.randint(4, 9))]
            sentences.append(" ".join(words) + rng.choice(TERMINATORS))
        paragraphs.append(" ".join(sentences))
    return "\n\n".join(paragraphs)


def synth_documents(n_per_class: int, seed: int = 0, id_prefix: str = "d") -> list[Document]:
    rng = random.Random(seed)
    docs = []
    for i in range(n_per_class):
        docs.append(
            Document(
                id=f"{id_prefix}h{i}",
                text=synth_text(rng, HUMAN_VOCAB),
                label=Label.HUMAN,
                language="en",
                generator="human",
                source="synthetic",
            )
        )
        docs.append(
            Document(
                id=f"{id_prefix}m{i}",
                text=synth_text(rng, MACHINE_VOCAB),
                label=Label.MACHINE,
                language="en",
                generator="synthbot",
                source="synthetic",
            )
        )
    return docs


def write_corpus(path, docs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            obj = {"id": doc.id, "text": doc.text}
            if doc.label is not None:
                obj["label"] = int(doc.label)
            if doc.generator:
                obj["model"] = doc.generator
            if doc.source:
                obj["source"] = doc.source
            if doc.language:
                obj["language"] = doc.language
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


# Tag-sequence grammars for the syntactic classifier: cyclic patterns with
# a random phase and length, one pattern per class.
GRAMMAR_A = ("DET", "NOUN", "VERB")
GRAMMAR_B = ("VERB", "VERB", "PUNCT")


def grammar_sequence(rng: random.Random, pattern: tuple[str, ...], length: int) -> list[str]:
    phase = rng.randrange(len(pattern))
    return [pattern[(phase + i) % len(pattern)] for i in range(length)]


def grammar_dataset(n_per_class: int, seed: int = 0, min_len: int = 12, max_len: int = 24):
    """Returns a list of (tags, label) with label 1 for grammar B."""
    rng = random.Random(seed)
    rows = []
    for _ in range(n_per_class):
        rows.append((grammar_sequence(rng, GRAMMAR_A, rng.randint(min_len, max_len)), 0))
        rows.append((grammar_sequence(rng, GRAMMAR_B, rng.randint(min_len, max_len)), 1))
    return rows
