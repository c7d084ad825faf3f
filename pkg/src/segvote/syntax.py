"""Classify part-of-speech tag sequences with a stacked BiLSTM + attention.

The sequence alphabet is the 17 Universal POS tags plus one UNK id. The
classifier embeds tag ids, runs them through stacked bidirectional LSTM
layers, pools the top-layer states with a learned dot-product attention,
and maps the pooled context to a single machine-probability. Forward,
backward (full BPTT) and training are implemented directly on numpy
arrays in float64, so gradients can be verified against central finite
differences.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import Document, Label
from .errors import (
    DegenerateTraining,
    EmptySequence,
    MalformedRecord,
    MissingTags,
    NonFiniteLoss,
    ScorerProtocolError,
    ShapeMismatch,
)
from . import protocol

UPOS_TAGS = (
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM",
    "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X",
)
UNK_TAG = "UNK"
UNK_ID = len(UPOS_TAGS)          # 17
N_TAG_IDS = len(UPOS_TAGS) + 1   # 18, UNK included

TAG_TO_ID = {name: i for i, name in enumerate(UPOS_TAGS)}
ID_TO_TAG = UPOS_TAGS + (UNK_TAG,)

DEFAULT_MAX_LEN = 512

CHECKPOINT_FORMAT = "segvote-syntax"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class UposSequence:
    doc_id: str
    ids: tuple[int, ...]
    unk_count: int = 0
    truncated: bool = False

    @property
    def length(self) -> int:
        return len(self.ids)


def upos_encode(tags: Sequence[str], doc_id: str = "", max_len: int = DEFAULT_MAX_LEN) -> UposSequence:
    """Map tag names to fixed ids; unknown names become UNK and are counted.

    Sequences longer than max_len keep their first max_len tags and are
    flagged as truncated.
    """
    if not tags:
        raise EmptySequence(f"no tags for doc {doc_id!r}")
    ids = []
    unk = 0
    for name in tags:
        tag_id = TAG_TO_ID.get(name, UNK_ID)
        if tag_id == UNK_ID:
            unk += 1
        ids.append(tag_id)
    truncated = len(ids) > max_len
    if truncated:
        ids = ids[:max_len]
    return UposSequence(doc_id=doc_id, ids=tuple(ids), unk_count=unk, truncated=truncated)


def upos_decode(seq: UposSequence) -> list[str]:
    return [ID_TO_TAG[i] for i in seq.ids]


@dataclass(frozen=True)
class SyntaxConfig:
    embed_dim: int = 16
    hidden: int = 32
    layers: int = 2
    max_len: int = DEFAULT_MAX_LEN


def _param_shapes(cfg: SyntaxConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {"embedding": (N_TAG_IDS, cfg.embed_dim)}
    h = cfg.hidden
    for layer in range(cfg.layers):
        in_size = cfg.embed_dim if layer == 0 else 2 * h
        for direction in ("fwd", "bwd"):
            prefix = f"l{layer}.{direction}"
            shapes[f"{prefix}.W"] = (4 * h, in_size)
            shapes[f"{prefix}.U"] = (4 * h, h)
            shapes[f"{prefix}.b"] = (4 * h,)
    shapes["attention"] = (2 * h,)
    shapes["head.w"] = (2 * h,)
    shapes["head.b"] = (1,)
    return shapes


class SyntaxModel:
    """Parameter container; all arrays are float64 and shape-checked."""

    def __init__(self, config: SyntaxConfig, params: dict[str, np.ndarray], seed: int = 0):
        expected = _param_shapes(config)
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ShapeMismatch(f"parameter blocks mismatch: missing={missing} extra={extra}")
        for key, shape in expected.items():
            arr = np.asarray(params[key], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeMismatch(f"{key}: shape {arr.shape} != expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ShapeMismatch(f"{key}: non-finite parameters")
            params[key] = arr
        self.config = config
        self.params = params
        self.seed = seed

    def copy(self) -> "SyntaxModel":
        return SyntaxModel(self.config, {k: v.copy() for k, v in self.params.items()}, self.seed)


def init_syntax_model(cfg: SyntaxConfig = SyntaxConfig(), seed: int = 0) -> SyntaxModel:
    """Seeded init: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), forget bias 1."""
    rng = np.random.default_rng(seed)
    h = cfg.hidden

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    params: dict[str, np.ndarray] = {"embedding": uniform((N_TAG_IDS, cfg.embed_dim), cfg.embed_dim)}
    for layer in range(cfg.layers):
        in_size = cfg.embed_dim if layer == 0 else 2 * h
        for direction in ("fwd", "bwd"):
            prefix = f"l{layer}.{direction}"
            params[f"{prefix}.W"] = uniform((4 * h, in_size), in_size)
            params[f"{prefix}.U"] = uniform((4 * h, h), h)
            b = np.zeros(4 * h)
            b[h:2 * h] = 1.0  # forget gate
            params[f"{prefix}.b"] = b
    params["attention"] = uniform((2 * h,), 2 * h)
    params["head.w"] = uniform((2 * h,), 2 * h)
    params["head.b"] = np.zeros(1)
    return SyntaxModel(cfg, params, seed)


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z))
    return e / e.sum()


def _run_lstm(W: np.ndarray, U: np.ndarray, b: np.ndarray, xs: np.ndarray) -> dict:
    """One direction over inputs xs (T, in), zero initial state.

    Gate slices of the 4h pre-activation, in order: input, forget, cell
    candidate, output.
    """
    T = xs.shape[0]
    h = U.shape[1]
    gates = {name: np.empty((T, h)) for name in ("i", "f", "g", "o", "c", "h")}
    h_prev = np.zeros(h)
    c_prev = np.zeros(h)
    for t in range(T):
        z = W @ xs[t] + U @ h_prev + b
        i = _sigmoid(z[:h])
        f = _sigmoid(z[h:2 * h])
        g = np.tanh(z[2 * h:3 * h])
        o = _sigmoid(z[3 * h:])
        c = f * c_prev + i * g
        hh = o * np.tanh(c)
        gates["i"][t] = i
        gates["f"][t] = f
        gates["g"][t] = g
        gates["o"][t] = o
        gates["c"][t] = c
        gates["h"][t] = hh
        h_prev = hh
        c_prev = c
    return gates


def _lstm_backward(
    W: np.ndarray,
    U: np.ndarray,
    xs: np.ndarray,
    cache: dict,
    dh_out: np.ndarray,
    gW: np.ndarray,
    gU: np.ndarray,
    gb: np.ndarray,
) -> np.ndarray:
    """BPTT for one direction; accumulates into gW/gU/gb, returns d(xs)."""
    T, h = cache["h"].shape
    dxs = np.zeros_like(xs)
    dh_next = np.zeros(h)
    dc_next = np.zeros(h)
    for t in range(T - 1, -1, -1):
        i, f, g, o, c = (cache[k][t] for k in ("i", "f", "g", "o", "c"))
        c_prev = cache["c"][t - 1] if t > 0 else np.zeros(h)
        h_prev = cache["h"][t - 1] if t > 0 else np.zeros(h)
        dh = dh_out[t] + dh_next
        tc = np.tanh(c)
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ])
        gW += np.outer(dz, xs[t])
        gU += np.outer(dz, h_prev)
        gb += dz
        dxs[t] = W.T @ dz
        dh_next = U.T @ dz
    return dxs


@dataclass
class ForwardResult:
    p_machine: float
    attention: np.ndarray
    caches: dict = field(repr=False)


def forward(model: SyntaxModel, seq: UposSequence) -> ForwardResult:
    """Run the classifier; caches hold everything backward() needs.

    Attention weights are a probability vector over timesteps; the pooled
    context is their weighted sum of top-layer states.
    """
    cfg = model.config
    ids = np.asarray(seq.ids, dtype=np.intp)
    if ids.size == 0:
        raise EmptySequence(f"empty sequence for doc {seq.doc_id!r}")
    if ids.min() < 0 or ids.max() >= N_TAG_IDS:
        raise ShapeMismatch(f"tag id out of range in doc {seq.doc_id!r}")

    x = model.params["embedding"][ids]
    inputs = []
    layer_caches = []
    for layer in range(cfg.layers):
        inputs.append(x)
        fwd = _run_lstm(
            model.params[f"l{layer}.fwd.W"],
            model.params[f"l{layer}.fwd.U"],
            model.params[f"l{layer}.fwd.b"],
            x,
        )
        bwd = _run_lstm(
            model.params[f"l{layer}.bwd.W"],
            model.params[f"l{layer}.bwd.U"],
            model.params[f"l{layer}.bwd.b"],
            x[::-1],
        )
        # backward states re-aligned to original positions
        x = np.concatenate([fwd["h"], bwd["h"][::-1]], axis=1)
        layer_caches.append({"fwd": fwd, "bwd": bwd})

    top = x
    scores = top @ model.params["attention"]
    alpha = _softmax(scores)
    context = alpha @ top
    logit = float(model.params["head.w"] @ context + model.params["head.b"][0])
    p = float(_sigmoid(np.array(logit)))

    caches = {
        "ids": ids,
        "inputs": inputs,
        "layers": layer_caches,
        "top": top,
        "alpha": alpha,
        "context": context,
        "p": p,
    }
    return ForwardResult(p_machine=p, attention=alpha, caches=caches)


def backward(model: SyntaxModel, seq: UposSequence, gold: int, caches: dict) -> dict[str, np.ndarray]:
    """Analytic gradients of binary cross-entropy w.r.t. every parameter."""
    cfg = model.config
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}

    p = caches["p"]
    top = caches["top"]
    alpha = caches["alpha"]
    context = caches["context"]

    dlogit = p - float(gold)  # BCE through the sigmoid
    grads["head.w"] += dlogit * context
    grads["head.b"][0] += dlogit
    dctx = dlogit * model.params["head.w"]

    dalpha = top @ dctx
    dtop = np.outer(alpha, dctx)
    dscores = alpha * (dalpha - float(alpha @ dalpha))  # softmax jacobian
    grads["attention"] += dscores @ top
    dtop += np.outer(dscores, model.params["attention"])

    dx = dtop
    h = cfg.hidden
    for layer in range(cfg.layers - 1, -1, -1):
        xs = caches["inputs"][layer]
        cache = caches["layers"][layer]
        dh_fwd = dx[:, :h]
        dh_bwd = dx[:, h:][::-1]  # back to the backward pass's processing order
        dxs = _lstm_backward(
            model.params[f"l{layer}.fwd.W"],
            model.params[f"l{layer}.fwd.U"],
            xs,
            cache["fwd"],
            dh_fwd,
            grads[f"l{layer}.fwd.W"],
            grads[f"l{layer}.fwd.U"],
            grads[f"l{layer}.fwd.b"],
        )
        dxs_rev = _lstm_backward(
            model.params[f"l{layer}.bwd.W"],
            model.params[f"l{layer}.bwd.U"],
            xs[::-1],
            cache["bwd"],
            dh_bwd,
            grads[f"l{layer}.bwd.W"],
            grads[f"l{layer}.bwd.U"],
            grads[f"l{layer}.bwd.b"],
        )
        dx = dxs + dxs_rev[::-1]

    for t, tag in enumerate(caches["ids"]):
        grads["embedding"][tag] += dx[t]
    return grads


def bce_loss(p: float, gold: int) -> float:
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    y = float(gold)
    return -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))


def sequence_loss(model: SyntaxModel, seq: UposSequence, gold: int) -> float:
    return bce_loss(forward(model, seq).p_machine, gold)


def gradient_check(
    model: SyntaxModel,
    seq: UposSequence,
    gold: int,
    eps: float = 1e-4,
) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients,
    per parameter block. Relative error uses |a - d| / (|a| + |d| + 1e-12)."""
    result = forward(model, seq)
    grads = backward(model, seq, gold, result.caches)
    errors: dict[str, float] = {}
    for key, arr in model.params.items():
        worst = 0.0
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            loss_plus = sequence_loss(model, seq, gold)
            arr[idx] = orig - eps
            loss_minus = sequence_loss(model, seq, gold)
            arr[idx] = orig
            fd = (loss_plus - loss_minus) / (2.0 * eps)
            analytic = grads[key][idx]
            rel = abs(analytic - fd) / (abs(analytic) + abs(fd) + 1e-12)
            worst = max(worst, rel)
        errors[key] = worst
    return errors


@dataclass(frozen=True)
class SyntaxTrainConfig:
    epochs: int = 20
    lr: float = 0.2
    batch_size: int = 16
    clip_norm: float = 5.0
    seed: int = 0
    val_fraction: float = 0.2


def _dataset_loss_acc(model: SyntaxModel, data: Sequence[tuple[UposSequence, int]]) -> tuple[float, float]:
    if not data:
        return float("nan"), float("nan")
    total = 0.0
    correct = 0
    for seq, gold in data:
        p = forward(model, seq).p_machine
        total += bce_loss(p, gold)
        correct += int((p > 0.5) == bool(gold))
    return total / len(data), correct / len(data)


def _clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> None:
    if clip_norm <= 0:
        return
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > clip_norm:
        scale = clip_norm / norm
        for g in grads.values():
            g *= scale


def train_syntax(
    data: Sequence[tuple[UposSequence, int]],
    model_cfg: SyntaxConfig = SyntaxConfig(),
    train_cfg: SyntaxTrainConfig = SyntaxTrainConfig(),
    val_data: Optional[Sequence[tuple[UposSequence, int]]] = None,
) -> tuple[SyntaxModel, list[dict]]:
    """SGD with gradient-norm clipping; deterministic under a fixed seed.

    When no validation set is given, a seeded shuffle carves off
    ``val_fraction`` of the data. Returns the trained model and a trace
    with per-epoch train/validation loss and accuracy.
    """
    data = [(seq, int(gold)) for seq, gold in data]
    if len({gold for _, gold in data}) < 2:
        raise DegenerateTraining("training data contains a single class")

    rng = np.random.default_rng(train_cfg.seed)
    if val_data is None and train_cfg.val_fraction > 0:
        order = rng.permutation(len(data))
        n_val = int(round(train_cfg.val_fraction * len(data)))
        val_data = [data[i] for i in order[:n_val]]
        train_data = [data[i] for i in order[n_val:]]
    else:
        val_data = list(val_data) if val_data is not None else []
        train_data = data
    if len({gold for _, gold in train_data}) < 2:
        raise DegenerateTraining("training split contains a single class")

    model = init_syntax_model(model_cfg, seed=train_cfg.seed)
    trace: list[dict] = []
    n = len(train_data)
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, train_cfg.batch_size):
            batch = order[lo:lo + train_cfg.batch_size]
            grads = {k: np.zeros_like(v) for k, v in model.params.items()}
            for idx in batch:
                seq, gold = train_data[idx]
                result = forward(model, seq)
                g = backward(model, seq, gold, result.caches)
                for key in grads:
                    grads[key] += g[key]
            for key in grads:
                grads[key] /= len(batch)
            _clip_gradients(grads, train_cfg.clip_norm)
            for key, g in grads.items():
                model.params[key] -= train_cfg.lr * g

        train_loss, train_acc = _dataset_loss_acc(model, train_data)
        if not math.isfinite(train_loss):
            raise NonFiniteLoss(f"training loss diverged at epoch {epoch} (lr={train_cfg.lr})")
        entry = {"epoch": epoch, "train_loss": train_loss, "train_acc": train_acc}
        if val_data:
            val_loss, val_acc = _dataset_loss_acc(model, val_data)
            entry["val_loss"] = val_loss
            entry["val_acc"] = val_acc
        trace.append(entry)
    return model, trace


def save_syntax_model(model: SyntaxModel, path: str) -> None:
    obj = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": {
            "embed_dim": model.config.embed_dim,
            "hidden": model.config.hidden,
            "layers": model.config.layers,
            "max_len": model.config.max_len,
        },
        "seed": model.seed,
        "params": {
            key: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for key, arr in model.params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)


def load_syntax_model(path: str) -> SyntaxModel:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} checkpoint: {path}")
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {obj.get('version')}")
    cfg = SyntaxConfig(**obj["config"])
    params = {}
    for key, block in obj["params"].items():
        params[key] = np.array(block["data"], dtype=np.float64).reshape(block["shape"])
    return SyntaxModel(cfg, params, seed=obj.get("seed", 0))


@dataclass
class TagSkip:
    doc_id: str
    reason: str


class PretaggedReader:
    """Streaming reader for JSONL rows ``{"id", "tags": [...], "label"?}``.

    Yields (UposSequence, Optional[Label]); bad rows are skipped and
    reported unless strict.
    """

    def __init__(self, path: str, strict: bool = False, max_len: int = DEFAULT_MAX_LEN):
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        self.path = path
        self.strict = strict
        self.max_len = max_len
        self.skipped: list[TagSkip] = []

    def _parse_row(self, raw: str, line_no: int) -> tuple[UposSequence, Optional[Label]]:
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(line_no, f"invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise MalformedRecord(line_no, "row is not a JSON object")
        doc_id = obj.get("id")
        if not isinstance(doc_id, str) or not doc_id:
            raise MalformedRecord(line_no, f"invalid id {obj.get('id')!r}")
        if "tags" not in obj:
            raise MissingTags(f"line {line_no}: row {doc_id!r} has no tags")
        tags = obj["tags"]
        if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
            raise MalformedRecord(line_no, "tags must be a list of strings")
        if not tags:
            raise EmptySequence(f"line {line_no}: empty tags for {doc_id!r}")
        label = obj.get("label")
        if label is not None:
            if isinstance(label, bool) or not isinstance(label, int) or label not in (0, 1):
                raise MalformedRecord(line_no, f"label must be 0 or 1, got {label!r}")
            label = Label(label)
        return upos_encode(tags, doc_id=doc_id, max_len=self.max_len), label

    def __iter__(self):
        with open(self.path, "r", encoding="utf-8-sig", newline="") as fh:
            for line_no, raw in enumerate(fh, start=1):
                raw = raw.rstrip("\r\n")
                if not raw.strip():
                    continue
                try:
                    yield self._parse_row(raw, line_no)
                except (MalformedRecord, MissingTags, EmptySequence) as exc:
                    if self.strict:
                        raise
                    self.skipped.append(TagSkip(doc_id=f"line {line_no}", reason=str(exc)))


def tag_documents(
    docs: Iterable[Document],
    target: str,
    timeout: float = 10.0,
    max_len: int = DEFAULT_MAX_LEN,
) -> tuple[list[UposSequence], list[TagSkip]]:
    """Tag documents through an external tagger speaking the wire protocol.

    Request ``{"id", "text"}``, reply ``{"id", "tags": [...]}``. Documents
    the tagger reports an error for are skipped with a report; protocol
    violations (wrong id, malformed reply) raise.
    """
    client = protocol.connect(target, timeout)
    sequences: list[UposSequence] = []
    skipped: list[TagSkip] = []
    try:
        for doc in docs:
            reply = client.request(text=doc.text, raise_on_error=False)
            if "error" in reply:
                skipped.append(TagSkip(doc_id=doc.id, reason=str(reply["error"])))
                continue
            tags = reply.get("tags")
            if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
                raise ScorerProtocolError(f"tagger reply lacks a tag list: {reply!r}")
            if not tags:
                skipped.append(TagSkip(doc_id=doc.id, reason="tagger returned no tags"))
                continue
            sequences.append(upos_encode(tags, doc_id=doc.id, max_len=max_len))
    finally:
        client.close()
    return sequences, skipped
