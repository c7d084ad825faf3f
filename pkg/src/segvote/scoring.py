"""Per-segment machine-probability scorers.

Two implementations of the same interface: a built-in logistic regression
over hashed character n-grams (trainable in seconds, no model downloads)
and a client for any external scorer speaking the v1 wire protocol. Only
p(machine | segment) flows out of here, so the voting layer never cares
which one produced it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Protocol, Sequence

import numpy as np

from . import protocol
from .errors import DegenerateTraining, NonFiniteLoss, ScorerProtocolError
from .segmenter import Segment

P_FLOOR = 1e-6
P_CEIL = 1.0 - 1e-6

CHECKPOINT_FORMAT = "segvote-ngram"
CHECKPOINT_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


class Scorer(Protocol):
    scorer_id: str

    def score_text(self, text: str) -> float: ...


@dataclass(frozen=True)
class SegmentScore:
    doc_id: str
    index: int
    p_machine: float
    logit: float
    scorer_id: str

    def __post_init__(self):
        if not (0.0 <= self.p_machine <= 1.0):
            raise ValueError(f"p_machine out of [0, 1]: {self.p_machine}")
        if abs(_sigmoid(self.logit) - self.p_machine) >= 1e-9:
            raise ValueError(
                f"inconsistent score: sigmoid({self.logit}) != {self.p_machine}"
            )


def _sigmoid(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def clamp_probability(p: float) -> float:
    return min(max(p, P_FLOOR), P_CEIL)


def score_segment(scorer: Scorer, seg: Segment) -> SegmentScore:
    """Score one segment; probabilities are clamped before logit conversion."""
    p = clamp_probability(float(scorer.score_text(seg.text)))
    logit = math.log(p / (1.0 - p))
    return SegmentScore(
        doc_id=seg.doc_id,
        index=seg.index,
        p_machine=p,
        logit=logit,
        scorer_id=scorer.scorer_id,
    )


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a; fixed published constants, stable across platforms."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


@lru_cache(maxsize=1 << 20)
def _bucket(ngram: str, mask: int) -> int:
    return fnv1a64(ngram.encode("utf-8")) & mask


def featurize(text: str, n_low: int = 2, n_high: int = 4, dim: int = 1 << 18) -> dict[int, int]:
    """Hashed character n-gram counts for n in [n_low, n_high].

    Text is lowercased first (a no-op for caseless scripts); buckets are
    ``fnv1a64(utf8(ngram)) mod dim``. Returns a sparse bucket->count map.
    """
    if dim <= 0 or dim & (dim - 1):
        raise ValueError(f"dim must be a power of two, got {dim}")
    s = text.lower()
    mask = dim - 1
    counts: dict[int, int] = {}
    for n in range(n_low, n_high + 1):
        for i in range(len(s) - n + 1):
            bucket = _bucket(s[i:i + n], mask)
            counts[bucket] = counts.get(bucket, 0) + 1
    return counts


@dataclass(frozen=True)
class NgramTrainConfig:
    n_low: int = 2
    n_high: int = 4
    dim: int = 1 << 18
    epochs: int = 5
    batch_size: int = 64
    lr: float = 0.1
    l2: float = 0.0
    seed: int = 0


@dataclass
class NgramScorerModel:
    """Logistic regression over hashed character n-gram counts."""

    n_low: int
    n_high: int
    dim: int
    weights: np.ndarray
    bias: float
    meta: dict = field(default_factory=dict)
    scorer_id: str = "builtin-ngram"

    def __post_init__(self):
        if self.dim <= 0 or self.dim & (self.dim - 1):
            raise ValueError(f"dim must be a power of two, got {self.dim}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.dim,):
            raise ValueError(f"weights shape {self.weights.shape} != ({self.dim},)")
        if not np.all(np.isfinite(self.weights)) or not math.isfinite(self.bias):
            raise ValueError("non-finite model parameters")

    def decision_value(self, text: str) -> float:
        feats = featurize(text, self.n_low, self.n_high, self.dim)
        z = self.bias
        for bucket, count in feats.items():
            z += float(self.weights[bucket]) * count
        return z

    def score_text(self, text: str) -> float:
        return _sigmoid(self.decision_value(text))

    def save(self, path: str) -> None:
        obj = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "n_low": self.n_low,
            "n_high": self.n_high,
            "dim": self.dim,
            "bias": self.bias,
            "weights": self.weights.tolist(),
            "meta": self.meta,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh)

    @classmethod
    def load(cls, path: str) -> "NgramScorerModel":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        if obj.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"not a {CHECKPOINT_FORMAT} checkpoint: {path}")
        if obj.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {obj.get('version')}")
        return cls(
            n_low=obj["n_low"],
            n_high=obj["n_high"],
            dim=obj["dim"],
            weights=np.array(obj["weights"], dtype=np.float64),
            bias=float(obj["bias"]),
            meta=obj.get("meta", {}),
        )


def _mean_loss(feats: list[dict[int, int]], ys: np.ndarray, w: np.ndarray, bias: float) -> float:
    total = 0.0
    for f, y in zip(feats, ys):
        z = bias
        for bucket, count in f.items():
            z += w[bucket] * count
        if math.isnan(z):
            return float("nan")
        p = min(max(_sigmoid(z), 1e-12), 1.0 - 1e-12)
        total += -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))
    return total / len(feats)


def train_ngram_scorer(
    train: Iterable[tuple[Segment, int]],
    cfg: NgramTrainConfig = NgramTrainConfig(),
) -> NgramScorerModel:
    """Train the built-in scorer by seeded mini-batch gradient descent.

    ``train`` yields (segment, label) pairs with label 0 = human,
    1 = machine. The loss trace (initial loss plus one entry per epoch)
    lands in ``model.meta["loss_trace"]``. Bit-for-bit reproducible given
    the same data order, seed and config.

    Raises DegenerateTraining when only one class is present and
    NonFiniteLoss when the loss diverges.
    """
    feats: list[dict[int, int]] = []
    ys_list: list[float] = []
    for seg, label in train:
        feats.append(featurize(seg.text, cfg.n_low, cfg.n_high, cfg.dim))
        ys_list.append(float(int(label)))
    if not feats:
        raise DegenerateTraining("empty training stream")
    ys = np.array(ys_list)
    if len(set(ys_list)) < 2:
        raise DegenerateTraining("training data contains a single class")

    n = len(feats)
    w = np.zeros(cfg.dim)
    bias = 0.0
    loss_trace = [_mean_loss(feats, ys, w, bias)]

    rng = np.random.default_rng(cfg.seed)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            for lo in range(0, n, cfg.batch_size):
                batch = order[lo:lo + cfg.batch_size]
                grad: dict[int, float] = {}
                grad_bias = 0.0
                for idx in batch:
                    z = bias
                    for bucket, count in feats[idx].items():
                        z += w[bucket] * count
                    residual = (_sigmoid(z) - ys[idx]) / len(batch) if not math.isnan(z) else float("nan")
                    for bucket, count in feats[idx].items():
                        grad[bucket] = grad.get(bucket, 0.0) + residual * count
                    grad_bias += residual
                if cfg.l2 > 0.0:
                    w *= 1.0 - cfg.lr * cfg.l2
                for bucket, g in grad.items():
                    w[bucket] -= cfg.lr * g
                bias -= cfg.lr * grad_bias
            loss = _mean_loss(feats, ys, w, bias)
            if not math.isfinite(loss) or not math.isfinite(bias) or not np.all(np.isfinite(w)):
                raise NonFiniteLoss(
                    f"training diverged (lr={cfg.lr}); lower the learning rate"
                )
            loss_trace.append(loss)

    meta = {
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "lr": cfg.lr,
        "batch_size": cfg.batch_size,
        "l2": cfg.l2,
        "n_train": n,
        "loss_trace": loss_trace,
    }
    return NgramScorerModel(
        n_low=cfg.n_low, n_high=cfg.n_high, dim=cfg.dim, weights=w, bias=bias, meta=meta
    )


class ExternalScorer:
    """Scorer handle backed by a wire-protocol peer (subprocess or TCP)."""

    def __init__(self, client: protocol.WireClient, scorer_id: str):
        self._client = client
        self.scorer_id = scorer_id

    @staticmethod
    def _check_probability(reply: dict) -> float:
        p = reply.get("p_machine")
        if isinstance(p, bool) or not isinstance(p, (int, float)):
            raise ScorerProtocolError(f"reply lacks a numeric p_machine: {reply!r}")
        p = float(p)
        if not math.isfinite(p) or not (0.0 <= p <= 1.0):
            raise ScorerProtocolError(f"p_machine out of [0, 1]: {p!r}")
        return p

    def score_text(self, text: str) -> float:
        return self._check_probability(self._client.request(text=text))

    def score_texts(self, texts: Sequence[str]) -> list[float]:
        """Pipelined batch scoring; reply order is request order."""
        replies = self._client.request_many([{"text": t} for t in texts])
        return [self._check_probability(r) for r in replies]

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "ExternalScorer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def connect_external_scorer(target: str, timeout: float = 10.0) -> ExternalScorer:
    """Connect and handshake with an external scorer.

    ``target`` is ``exec:CMD`` (spawn a child process, protocol over its
    stdio) or ``tcp:HOST:PORT``.
    """
    client = protocol.connect(target, timeout)
    return ExternalScorer(client, client.peer_id)


class StubScorer:
    """Fixed-output scorer for tests and wiring checks."""

    def __init__(self, probabilities, scorer_id: str = "stub"):
        self._probs = dict(probabilities) if isinstance(probabilities, dict) else None
        self._constant = None if self._probs is not None else float(probabilities)
        self.scorer_id = scorer_id

    def score_text(self, text: str) -> float:
        if self._probs is not None:
            return self._probs[text]
        return self._constant
