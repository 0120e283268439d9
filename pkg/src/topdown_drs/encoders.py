"""EDU encoder (BiGRU + self-attention pooling) and split-point encoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (GruCell, ShapeError, Tensor, add, attention_pool, bigru_run, concat, conv_width2,
                       dropout, row, stack, take_rows)


@dataclass
class EduEncoderParams:
    word_emb: Tensor
    pos_emb: Tensor
    fwd: GruCell
    bwd: GruCell
    query: Tensor

    def __post_init__(self):
        width = self.fwd.hidden_dim + self.bwd.hidden_dim
        if self.query.shape != (width,):
            raise ShapeError(f"attention query must have length {width}, got {self.query.shape}")

    @property
    def out_dim(self) -> int:
        return self.fwd.hidden_dim + self.bwd.hidden_dim


@dataclass
class SplitEncoderParams:
    fwd: GruCell
    bwd: GruCell
    conv_weight: Tensor
    conv_bias: Tensor

    def __post_init__(self):
        width = self.fwd.hidden_dim + self.bwd.hidden_dim
        if self.conv_weight.shape[1] != 2 * width:
            raise ShapeError(f"convolution input width must be {2 * width}, got {self.conv_weight.shape[1]}")


@dataclass
class EncodedDocument:
    edu_vectors: list        # h_e, one Tensor per EDU
    context: Tensor          # h'_e as an (N, d) matrix
    splits: Tensor           # h_s as an (N + 1, d) matrix; rows 0 and N are the boundary stubs
    attention: list          # per-EDU word weights

    @property
    def n_edus(self) -> int:
        return len(self.edu_vectors)


def encode_edu(p: EduEncoderParams, word_ids, pos_ids, attention: str = "softmax",
               dropout_rate: float = 0.0, rng=None) -> Tensor:
    """h_ek = [last forward state; last backward state] + sum_i w_i h_i."""
    word_ids = np.asarray(word_ids)
    if word_ids.size == 0:
        raise ShapeError("cannot encode an empty EDU")
    emb = concat(take_rows(p.word_emb, word_ids), take_rows(p.pos_emb, np.asarray(pos_ids)), axis=1)
    emb = dropout(emb, dropout_rate, rng)
    outputs, last_f, last_b = bigru_run(p.fwd, p.bwd, [row(emb, i) for i in range(len(word_ids))])
    pooled = attention_pool(stack(outputs), p.query, attention)
    h = add(concat(last_f, last_b), pooled)
    h.extra = pooled.extra
    return h


def encode_document(p_edu: EduEncoderParams, p_split: SplitEncoderParams, edus, attention: str = "softmax",
                    dropout_rate: float = 0.0, rng=None) -> EncodedDocument:
    """Encode an indexed document (a list of (word_ids, pos_ids) pairs).

    The EDU-sequence BiGRU output is padded with a zero stub on each side and
    the width-2 convolution turns the N + 2 vectors into N + 1 split vectors.
    """
    if len(edus) < 2:
        raise ShapeError(f"a document needs at least 2 EDUs to have split points, got {len(edus)}")
    h_e = [encode_edu(p_edu, w, t, attention, dropout_rate, rng) for w, t in edus]
    seq = dropout(stack(h_e), dropout_rate, rng)
    ctx, _, _ = bigru_run(p_split.fwd, p_split.bwd, [row(seq, i) for i in range(len(h_e))])
    stub = Tensor(np.zeros(ctx[0].shape[0]))
    context = stack(ctx)
    splits = conv_width2(p_split.conv_weight, p_split.conv_bias, stack([stub, *ctx, stub]))
    return EncodedDocument(h_e, context, splits, [h.extra for h in h_e])
