"""Teacher-forced losses, the training loop and checkpoint files."""
from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import Document, Vocabulary
from .model import Model, ModelConfig
from .numerics import AdamState, adam_update, make_rng, no_grad, softmax_nll, weighted_sum
from .tree import aggregate_report, parseval, tree_to_decisions, validate

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 10
    learning_rate: float = 0.001
    alpha_s: float = 0.3
    alpha_n: float = 1.0
    alpha_r: float = 1.0
    dropout: float = 0.2
    seed: int = 1
    max_grad_norm: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> list:
        problems = []
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        for name in ("alpha_s", "alpha_n", "alpha_r"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            problems.append("dropout must lie in [0, 1)")
        if self.learning_rate <= 0:
            problems.append("learning_rate must be positive")
        return problems


@dataclass
class LossBreakdown:
    L_s: float = 0.0
    L_n: float = 0.0
    L_r: float = 0.0
    L: float = 0.0

    def __iadd__(self, other: "LossBreakdown"):
        self.L_s += other.L_s
        self.L_n += other.L_n
        self.L_r += other.L_r
        self.L += other.L
        return self


def gold_decisions(doc: Document) -> list:
    tree = doc.binary_tree
    if tree is None:
        raise TrainingError(f"{doc.doc_id}: document has no gold tree")
    validate(tree, require_binary=True, require_labels=True)
    return tree_to_decisions(tree)


def document_loss(model: Model, doc: Document, cfg: TrainConfig = TrainConfig(), rng=None):
    """Teacher-forced NLL summed over decoding steps.

    Returns ``(LossBreakdown, loss_tensor)``; the tensor is
    alpha_s*L_s + alpha_n*L_n + alpha_r*L_r and can be back-propagated.
    Dropout is active only when ``rng`` is given.
    """
    if doc.n_edus < 2:
        raise TrainingError(f"{doc.doc_id}: need at least 2 EDUs for a loss")
    gold = gold_decisions(doc)
    rate = cfg.dropout if rng is not None else 0.0
    decoding = model.decode(doc, oracle=gold, dropout_rate=rate, rng=rng)
    nuc_index, rel_index = model.vocab.nuclearity, model.vocab.relations
    terms = []
    parts = LossBreakdown()
    for step, g in zip(decoding.steps, gold):
        if g.relation not in rel_index:
            raise TrainingError(f"{doc.doc_id}: relation {g.relation!r} not in the vocabulary")
        ls = softmax_nll(step.split_scores, int(np.searchsorted(step.candidates, g.split)))
        ln = softmax_nll(step.nuc_scores, nuc_index[g.nuclearity])
        lr = softmax_nll(step.rel_scores, rel_index[g.relation])
        terms += [(cfg.alpha_s, ls), (cfg.alpha_n, ln), (cfg.alpha_r, lr)]
        parts.L_s += float(ls.data)
        parts.L_n += float(ln.data)
        parts.L_r += float(lr.data)
    loss = weighted_sum(terms)
    parts.L = float(loss.data)
    return parts, loss


def evaluate(model: Model, docs) -> "EvalReport":
    counts = []
    with no_grad():
        for doc in docs:
            counts.append(parseval(model.parse(doc), doc.binary_tree))
    return aggregate_report(counts)


@dataclass
class TrainResult:
    log: list = field(default_factory=list)
    best_epoch: int = 0
    best_dev: float | None = None
    best: dict | None = None      # parameter snapshot selected on dev
    optimizer: AdamState | None = None


def _clip(grads: dict, max_norm: float) -> None:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm:
        for g in grads.values():
            g *= max_norm / norm


def train(model: Model, corpus, dev_corpus=(), cfg: TrainConfig = TrainConfig(), on_record=None) -> TrainResult:
    """Mini-batch training with gradient accumulation and one Adam step per batch.

    After each epoch the dev set (if any) is parsed free-running; the
    parameters with the best full micro-F1 are kept in ``result.best``.
    ``on_record`` receives every log record as it is produced.
    """
    problems = cfg.validate()
    if problems:
        raise ValueError("; ".join(problems))
    docs = [d for d in corpus if d.n_edus >= 2]
    if not docs:
        raise TrainingError("no training document has 2 or more EDUs")
    dev = [d for d in dev_corpus if d.binary_tree is not None]
    shuffle_rng = make_rng(cfg.seed)
    drop_rng = make_rng(cfg.seed + 1) if cfg.dropout > 0 else None
    params = model.trainable()
    state = AdamState()
    result = TrainResult(optimizer=state)

    def emit(rec):
        result.log.append(rec)
        if on_record is not None:
            on_record(rec)

    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(docs))
        epoch_loss = LossBreakdown()
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [docs[i] for i in order[start:start + cfg.batch_size]]
            model.zero_grad()
            total = LossBreakdown()
            for doc in batch:
                parts, loss = document_loss(model, doc, cfg, drop_rng)
                if not np.isfinite(parts.L):
                    raise TrainingError(f"non-finite loss on document {doc.doc_id}")
                loss.backward()
                total += parts
            grads = {k: t.grad for k, t in params.items() if t.grad is not None}
            if cfg.max_grad_norm is not None:
                _clip(grads, cfg.max_grad_norm)
            adam_update(params, grads, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
            epoch_loss += total
            emit({"type": "batch", "epoch": epoch, "batch": b, "docs": [d.doc_id for d in batch],
                  **asdict(total)})
        rec = {"type": "epoch", "epoch": epoch, **{f"train_{k}": v for k, v in asdict(epoch_loss).items()}}
        if dev:
            score = evaluate(model, dev).micro["full"]
            rec["dev_full_micro"] = score
            if result.best_dev is None or score > result.best_dev:
                result.best_dev, result.best_epoch, result.best = score, epoch, model.snapshot()
        emit(rec)
        log.info("epoch %d loss %.4f%s", epoch, epoch_loss.L,
                 f" dev full {rec['dev_full_micro']:.1f}" if dev else "")
    model.zero_grad()
    if result.best is None:
        result.best_epoch, result.best = cfg.epochs, model.snapshot()
    return result


# --- checkpoints -------------------------------------------------------------
#
# Layout: MAGIC, u64 header length, UTF-8 JSON header, raw little-endian
# float64 blocks in header order, then the SHA-256 of everything before it.

MAGIC = b"TDDRSCKP"
VERSION = 1


def save_checkpoint(model: Model, path, extra: dict | None = None) -> None:
    blocks, offset, payload = [], 0, []
    for name, t in model.parameters().items():
        data = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        blocks.append({"name": name, "shape": list(t.data.shape), "offset": offset})
        payload.append(data)
        offset += len(data)
    header = {"version": VERSION, "config": model.config.to_dict(), "vocab": model.vocab.to_dict(),
              "blocks": blocks, "extra": extra or {}}
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<Q", len(head)) + head + b"".join(payload)
    with open(path, "wb") as fh:
        fh.write(body + hashlib.sha256(body).digest())


def load_checkpoint(path, expected: ModelConfig | None = None) -> Model:
    """Read a checkpoint; with ``expected`` every block shape is checked
    against a model built from that configuration."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 8 + 32 or raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupted file)")
    (hlen,) = struct.unpack("<Q", body[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    header = json.loads(body[start:start + hlen].decode("utf-8"))
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    config = ModelConfig.from_dict(header["config"])
    vocab = Vocabulary.from_dict(header["vocab"])
    try:
        model = Model.create(expected or config, vocab, seed=0)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    params = model.parameters()
    data = body[start + hlen:]
    stored = {b["name"] for b in header["blocks"]}
    missing = sorted(set(params) - stored)
    if missing:
        raise CheckpointError(f"{path}: missing parameter block {missing[0]!r}")
    for b in header["blocks"]:
        name, shape = b["name"], tuple(b["shape"])
        if name not in params:
            raise CheckpointError(f"{path}: unexpected parameter block {name!r}")
        if params[name].data.shape != shape:
            raise CheckpointError(f"{path}: block {name!r} has shape {shape}, "
                                  f"expected {params[name].data.shape}")
        n = int(np.prod(shape)) * 8
        arr = np.frombuffer(data, dtype="<f8", count=n // 8, offset=b["offset"])
        params[name].data[...] = arr.reshape(shape)
    return model
