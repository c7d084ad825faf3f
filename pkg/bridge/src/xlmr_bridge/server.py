"""Protocol loop: answer segment-scoring requests over stdio or TCP.

One JSON object per line. Handshake first:

    <- {"hello": "segvote-scorer", "version": 1}
    -> {"ack": "segvote-scorer", "version": 1, "scorer_id": "<id>"}

then ``{"id", "text"}`` requests answered in order with
``{"id", "p_machine"}``, or ``{"id", "error"}`` when a single request
fails. Class index 1 (corpus label 1) is the machine class.
"""

from __future__ import annotations

import json
import socket
import sys
from dataclasses import dataclass
from typing import Optional

PROTOCOL_NAME = "segvote-scorer"
PROTOCOL_VERSION = 1

P_FLOOR = 1e-6
P_CEIL = 1.0 - 1e-6


def clamp(p: float) -> float:
    return min(max(float(p), P_FLOOR), P_CEIL)


@dataclass
class BridgeConfig:
    model: Optional[str] = None       # checkpoint dir or hub identifier
    stub: Optional[float] = None      # constant probability, no model loaded
    transport: str = "stdio"          # stdio | tcp
    host: str = "127.0.0.1"
    port: int = 0
    scorer_id: str = "xlmr-ft"
    max_tokens: int = 512
    device: str = "cpu"

    def __post_init__(self):
        if (self.model is None) == (self.stub is None):
            raise ValueError("exactly one of model/stub must be set")
        if self.transport not in ("stdio", "tcp"):
            raise ValueError(f"unknown transport {self.transport!r}")


class StubScorer:
    def __init__(self, p: float):
        self._p = clamp(p)

    def score(self, text: str) -> float:
        return self._p


class TransformerScorer:
    """Sequence-classification model behind the protocol; lazy heavy imports."""

    def __init__(self, model: str, max_tokens: int, device: str):
        import torch
        from transformers import AutoModelForSequenceClassification, AutoTokenizer

        self._torch = torch
        self._tokenizer = AutoTokenizer.from_pretrained(model)
        self._model = AutoModelForSequenceClassification.from_pretrained(model)
        self._model.to(device)
        self._model.eval()
        self._device = device

        limit = getattr(self._model.config, "max_position_embeddings", None)
        if limit is not None and max_tokens > limit:
            raise ValueError(
                f"max_tokens {max_tokens} exceeds the model's positional limit {limit}"
            )
        self._max_tokens = max_tokens
        self._machine_index = self._find_machine_index(self._model.config)

    @staticmethod
    def _find_machine_index(config) -> int:
        for name, idx in (getattr(config, "label2id", None) or {}).items():
            if str(name).lower() == "machine":
                return int(idx)
        return 1

    def score(self, text: str) -> float:
        enc = self._tokenizer(
            text,
            return_tensors="pt",
            truncation=True,
            max_length=self._max_tokens,
        ).to(self._device)
        with self._torch.no_grad():
            logits = self._model(**enc).logits
        p = self._torch.softmax(logits, dim=-1)[0, self._machine_index]
        return clamp(p.item())


def build_scorer(config: BridgeConfig):
    if config.stub is not None:
        return StubScorer(config.stub)
    return TransformerScorer(config.model, config.max_tokens, config.device)


def _serve_stream(scorer, scorer_id: str, reader, writer) -> int:
    def send(obj) -> None:
        writer.write(json.dumps(obj) + "\n")
        writer.flush()

    hello_line = reader.readline()
    if not hello_line:
        print("xlmr-bridge: no handshake received", file=sys.stderr)
        return 1
    try:
        hello = json.loads(hello_line)
    except json.JSONDecodeError:
        print("xlmr-bridge: unparseable handshake", file=sys.stderr)
        return 1
    if not isinstance(hello, dict) or hello.get("hello") != PROTOCOL_NAME:
        print(f"xlmr-bridge: unexpected handshake {hello!r}", file=sys.stderr)
        return 1
    send({"ack": PROTOCOL_NAME, "version": PROTOCOL_VERSION, "scorer_id": scorer_id})

    for line in reader:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            send({"id": None, "error": "unparseable request line"})
            continue
        if not isinstance(req, dict):
            send({"id": None, "error": "request is not a JSON object"})
            continue
        rid = req.get("id")
        text = req.get("text")
        if not isinstance(text, str):
            send({"id": rid, "error": "request lacks a text field"})
            continue
        try:
            send({"id": rid, "p_machine": scorer.score(text)})
        except Exception as exc:  # answer, keep serving
            send({"id": rid, "error": f"{type(exc).__name__}: {exc}"})
    return 0


def serve(config: BridgeConfig) -> int:
    """Run the protocol loop; returns a process exit code."""
    try:
        scorer = build_scorer(config)
    except Exception as exc:
        print(f"xlmr-bridge: cannot load scorer: {exc}", file=sys.stderr)
        return 1

    if config.transport == "stdio":
        return _serve_stream(scorer, config.scorer_id, sys.stdin, sys.stdout)

    server = socket.socket()
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind((config.host, config.port))
    server.listen(1)
    print(f"xlmr-bridge: listening on {server.getsockname()[1]}", file=sys.stderr, flush=True)
    conn, _ = server.accept()
    with conn:
        reader = conn.makefile("r", encoding="utf-8")
        writer = conn.makefile("w", encoding="utf-8")
        code = _serve_stream(scorer, config.scorer_id, reader, writer)
    server.close()
    return code
