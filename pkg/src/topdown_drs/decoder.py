"""Stack-driven split-point decoder with biaffine split / nuclearity / relation heads."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoders import EncodedDocument
from .numerics import (GruCell, Mlp, ShapeError, Tensor, bigru_run, biaffine, concat, dropout, gru_step,
                       mlp_apply, reshape, row, stack, take_rows)
from .tree import NUCLEARITY, SplitDecision


@dataclass
class BiaffineHead:
    enc: Mlp
    dec: Mlp
    W: Tensor     # (m, k, n)
    U: Tensor     # (k, m)
    V: Tensor     # (k, n)
    b: Tensor     # (k,)

    def __post_init__(self):
        m, k, n = self.W.shape
        if m != self.enc.out_dim or n != self.dec.out_dim:
            raise ShapeError(f"biaffine W {self.W.shape} does not match MLP widths "
                             f"{self.enc.out_dim} / {self.dec.out_dim}")

    @property
    def k(self) -> int:
        return self.W.shape[1]


@dataclass
class DecoderParams:
    fwd: GruCell          # BiGRU over split vectors
    bwd: GruCell
    init: Mlp             # linear map from [last fwd; last bwd] to the decoder width
    cell: GruCell         # decoder GRU, input [h_se_l; h_se_r]
    split: BiaffineHead
    nuclearity: BiaffineHead
    relation: BiaffineHead


@dataclass
class StackFrame:
    left: int
    right: int

    def __post_init__(self):
        if self.right - self.left < 2:
            raise ValueError(f"frame ({self.left}, {self.right}) has no interior split point")


@dataclass
class Step:
    frame: tuple
    candidates: np.ndarray       # split indices scored at this step
    split_scores: Tensor         # one score per candidate
    nuc_scores: Tensor           # (3,) at the chosen split
    rel_scores: Tensor           # (k,) at the chosen split
    decision: SplitDecision


@dataclass
class ParseState:
    stack: list
    hidden: Tensor
    decisions: list = field(default_factory=list)


@dataclass
class Decoding:
    decisions: list
    steps: list


def encode_splits(p: DecoderParams, h_s: Tensor):
    """BiGRU over split vectors; returns (h_se matrix, initial decoder state)."""
    n = h_s.shape[0]
    if n < 3:
        raise ShapeError(f"need at least 3 split vectors (2 EDUs), got {n}")
    outputs, last_f, last_b = bigru_run(p.fwd, p.bwd, [row(h_s, i) for i in range(n)])
    return stack(outputs), mlp_apply(p.init, concat(last_f, last_b))


def biaffine_score(head: BiaffineHead, h_se, h_d) -> Tensor:
    """Scores (c, k) for each row of ``h_se`` against decoder output ``h_d``."""
    return biaffine(mlp_apply(head.enc, h_se), mlp_apply(head.dec, h_d), head.W, head.U, head.V, head.b)


class _Scorer:
    """Per-document cache of encoder-side MLP projections for the three heads."""

    def __init__(self, p: DecoderParams, h_se: Tensor, dropout_rate: float, rng):
        self.p = p
        self.h_se = h_se
        self.rate, self.rng = dropout_rate, rng
        src = dropout(h_se, dropout_rate, rng)
        self.enc = {name: mlp_apply(getattr(p, name).enc, src) for name in ("split", "nuclearity", "relation")}

    def step(self, h, l: int, r: int):
        x = concat(row(self.h_se, l), row(self.h_se, r))
        h = gru_step(self.p.cell, x, h)
        return h, dropout(h, self.rate, self.rng)

    def head(self, name: str, rows, h_d) -> Tensor:
        head = getattr(self.p, name)
        enc = take_rows(self.enc[name], rows)
        return biaffine(enc, mlp_apply(head.dec, h_d), head.W, head.U, head.V, head.b)


def _label(scores: np.ndarray, labels) -> str:
    if labels is None:
        return str(int(np.argmax(scores)))
    return labels[int(np.argmax(scores[:len(labels)]))]


def _run_step(sc: _Scorer, h, l: int, r: int, gold: SplitDecision | None, relation_labels):
    h, h_d = sc.step(h, l, r)
    candidates = np.arange(l + 1, r)
    split_scores = reshape(sc.head("split", candidates, h_d), (len(candidates),))
    if gold is None:
        m = int(candidates[np.argmax(split_scores.data)])  # argmax keeps the lowest index on ties
    else:
        m = gold.split
    nuc = reshape(sc.head("nuclearity", [m], h_d), (sc.p.nuclearity.k,))
    rel = reshape(sc.head("relation", [m], h_d), (sc.p.relation.k,))
    decision = SplitDecision(l, r, m, _label(nuc.data, NUCLEARITY), _label(rel.data, relation_labels))
    return h, Step((l, r), candidates, split_scores, nuc, rel, decision)


def decode_document(p: DecoderParams, enc: EncodedDocument, oracle=None, relation_labels=None,
                    dropout_rate: float = 0.0, rng=None) -> Decoding:
    """Greedy top-down decoding with an explicit stack of (left, right) frames.

    With ``oracle`` (gold decisions in pre-order) the gold split drives every
    transition and the per-step scores are kept for the loss.  Child frames
    are pushed right first, so the left span is decoded next.
    """
    n = enc.n_edus
    h_se, h0 = encode_splits(p, enc.splits)
    sc = _Scorer(p, h_se, dropout_rate, rng)
    state = ParseState([StackFrame(0, n)], h0)
    steps = []
    gold = list(oracle) if oracle is not None else None
    while state.stack:
        frame = state.stack.pop()
        l, r = frame.left, frame.right
        g = None
        if gold is not None:
            g = gold[len(steps)]
            if g.span != (l, r):
                raise ValueError(f"oracle decision {len(steps)} covers {g.span}, decoder expects {(l, r)}")
        state.hidden, step = _run_step(sc, state.hidden, l, r, g, relation_labels)
        steps.append(step)
        state.decisions.append(step.decision)
        m = step.decision.split
        if r - m >= 2:
            state.stack.append(StackFrame(m, r))
        if m - l >= 2:
            state.stack.append(StackFrame(l, m))
    assert len(state.decisions) == n - 1, "stack emptied before N-1 decisions"
    return Decoding(state.decisions, steps)


def decode_reference(p: DecoderParams, enc: EncodedDocument, relation_labels=None) -> list:
    """Recursive inference decoder; must agree with ``decode_document``."""
    h_se, h0 = encode_splits(p, enc.splits)
    sc = _Scorer(p, h_se, 0.0, None)
    out = []

    def visit(l, r, h):
        h, step = _run_step(sc, h, l, r, None, relation_labels)
        out.append(step.decision)
        m = step.decision.split
        if m - l >= 2:
            h = visit(l, m, h)
        if r - m >= 2:
            h = visit(m, r, h)
        return h

    visit(0, enc.n_edus, h0)
    return out
