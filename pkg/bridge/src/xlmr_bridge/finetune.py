"""Fine-tune a sequence classifier on labeled segments.

Input is the segment JSONL produced by ``segvote segment`` plus the gold
corpus JSONL it came from (segments carry no labels; they are joined by
doc_id). Defaults: 3 epochs at learning rate 1e-8. The run configuration
is logged to ``<out>/train_config.json`` before training starts, losses to
``<out>/train_log.json`` after.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import asdict, dataclass

DEFAULT_BASE_MODEL = "xlm-roberta-base"
DEFAULT_EPOCHS = 3
DEFAULT_LR = 1e-8


@dataclass
class FinetuneConfig:
    segments: str
    corpus: str
    out: str
    base_model: str = DEFAULT_BASE_MODEL
    epochs: int = DEFAULT_EPOCHS
    lr: float = DEFAULT_LR
    batch_size: int = 8
    max_tokens: int = 512
    seed: int = 0
    device: str = "cpu"


def _read_jsonl(path):
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if raw:
                yield line_no, json.loads(raw)


def load_labeled_segments(segments_path: str, corpus_path: str) -> tuple[list[str], list[int]]:
    """Join segment texts with their documents' gold labels by doc_id."""
    labels: dict[str, int] = {}
    for _, obj in _read_jsonl(corpus_path):
        label = obj.get("label")
        if isinstance(label, bool) or label not in (0, 1):
            continue
        labels[str(obj.get("id"))] = int(label)

    texts: list[str] = []
    ys: list[int] = []
    skipped = 0
    for _, obj in _read_jsonl(segments_path):
        doc_id = str(obj.get("doc_id"))
        text = obj.get("text")
        if doc_id not in labels or not isinstance(text, str) or not text:
            skipped += 1
            continue
        texts.append(text)
        ys.append(labels[doc_id])
    if skipped:
        print(f"xlmr-bridge: skipped {skipped} unlabeled/invalid segment(s)", file=sys.stderr)
    return texts, ys


def finetune(config: FinetuneConfig) -> dict:
    """Run the fine-tune; returns the training log. Raises on one-class data."""
    import torch
    from transformers import AutoModelForSequenceClassification, AutoTokenizer

    texts, ys = load_labeled_segments(config.segments, config.corpus)
    if len(set(ys)) < 2:
        raise ValueError("training data contains a single class; need both labels")

    os.makedirs(config.out, exist_ok=True)
    run_config = {
        **asdict(config),
        "n_segments": len(texts),
        "n_machine": sum(ys),
        "n_human": len(ys) - sum(ys),
    }
    with open(os.path.join(config.out, "train_config.json"), "w", encoding="utf-8") as fh:
        json.dump(run_config, fh, indent=2)

    torch.manual_seed(config.seed)
    tokenizer = AutoTokenizer.from_pretrained(config.base_model)
    model = AutoModelForSequenceClassification.from_pretrained(config.base_model, num_labels=2)
    model.to(config.device)

    optimizer = torch.optim.AdamW(model.parameters(), lr=config.lr)
    epoch_losses: list[float] = []
    model.train()
    for epoch in range(config.epochs):
        total = 0.0
        batches = 0
        for lo in range(0, len(texts), config.batch_size):
            batch_texts = texts[lo:lo + config.batch_size]
            batch_ys = torch.tensor(ys[lo:lo + config.batch_size])
            enc = tokenizer(
                batch_texts,
                return_tensors="pt",
                padding=True,
                truncation=True,
                max_length=config.max_tokens,
            ).to(config.device)
            out = model(**enc, labels=batch_ys.to(config.device))
            optimizer.zero_grad()
            out.loss.backward()
            optimizer.step()
            total += out.loss.item()
            batches += 1
        mean_loss = total / max(batches, 1)
        epoch_losses.append(mean_loss)
        print(f"xlmr-bridge: epoch {epoch}: loss {mean_loss:.6f}", file=sys.stderr)

    model.eval()
    model.save_pretrained(config.out)
    tokenizer.save_pretrained(config.out)

    log = {"epoch_losses": epoch_losses, "epochs": config.epochs, "lr": config.lr}
    with open(os.path.join(config.out, "train_log.json"), "w", encoding="utf-8") as fh:
        json.dump(log, fh, indent=2)
    return log
