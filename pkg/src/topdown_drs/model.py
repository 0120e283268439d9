"""Model configuration profiles and the parameter container."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .corpus import Document, EmbeddingTable, Vocabulary, random_embeddings
from .decoder import BiaffineHead, DecoderParams, decode_document, decode_reference
from .encoders import EduEncoderParams, EncodedDocument, SplitEncoderParams, encode_document
from .numerics import GruCell, Mlp, Tensor, glorot, make_rng, no_grad
from .tree import Leaf, decisions_to_tree


@dataclass(frozen=True)
class ModelConfig:
    word_dim: int = 300
    pos_dim: int = 30
    word_hidden: int = 256        # EDU encoder BiGRU, per direction
    edu_hidden: int = 256         # EDU-sequence BiGRU, per direction
    split_hidden: int = 256       # split-point BiGRU, per direction
    decoder_hidden: int = 512
    split_mlp: int = 64
    nuc_mlp: int = 64
    rel_mlp: int = 64
    n_relations: int = 18
    attention: str = "softmax"    # or "ratio" for the un-exponentiated weights
    train_word_embeddings: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# Published settings per language, plus a small profile for desk-scale checks.
PROFILES = {
    "en": {"model": ModelConfig(nuc_mlp=64, rel_mlp=64, n_relations=18),
           "train": {"dropout": 0.2, "batch_size": 10}},
    "zh": {"model": ModelConfig(nuc_mlp=32, rel_mlp=128, n_relations=16),
           "train": {"dropout": 0.33, "batch_size": 64}},
    "tiny": {"model": ModelConfig(word_dim=16, pos_dim=4, word_hidden=8, edu_hidden=8, split_hidden=8,
                                  decoder_hidden=8, split_mlp=8, nuc_mlp=8, rel_mlp=8, n_relations=16),
             "train": {"dropout": 0.0, "batch_size": 1}},
}


def profile(name: str, **overrides) -> ModelConfig:
    if name not in PROFILES:
        raise KeyError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return replace(PROFILES[name]["model"], **overrides)


def _gru(rng, i, h, name):
    return GruCell.create(i, h, rng, name)


def _head(rng, in_enc, in_dec, width, k, name):
    def t(a, n):
        return Tensor(a, True, f"{name}.{n}")
    W = np.stack([glorot(rng, width, width) for _ in range(k)], axis=1)
    return BiaffineHead(Mlp.create(in_enc, width, "relu", rng, f"{name}.enc"),
                        Mlp.create(in_dec, width, "relu", rng, f"{name}.dec"),
                        t(W, "W"), t(glorot(rng, k, width), "U"), t(glorot(rng, k, width), "V"),
                        t(np.zeros(k), "b"))


class Model:
    """All learnable weights plus the vocabulary they are indexed by."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, edu: EduEncoderParams,
                 split: SplitEncoderParams, dec: DecoderParams):
        if len(vocab.relations) > config.n_relations:
            raise ValueError(f"vocabulary has {len(vocab.relations)} relation labels, "
                             f"model has room for {config.n_relations}")
        self.config, self.vocab = config, vocab
        self.edu, self.split, self.dec = edu, split, dec

    @classmethod
    def create(cls, config: ModelConfig, vocab: Vocabulary, seed: int = 0,
               word_embeddings: EmbeddingTable | None = None) -> "Model":
        rng = make_rng(seed)
        c = config
        if word_embeddings is None:
            word_embeddings = random_embeddings(len(vocab.words), c.word_dim, seed + 1, scale=1.0)
        if word_embeddings.matrix.shape != (len(vocab.words), c.word_dim):
            raise ValueError(f"word embeddings have shape {word_embeddings.matrix.shape}, "
                             f"expected {(len(vocab.words), c.word_dim)}")
        n_pos = len(vocab.pos)
        edu = EduEncoderParams(
            Tensor(word_embeddings.matrix.copy(), c.train_word_embeddings, "word_emb"),
            Tensor(glorot(rng, n_pos, c.pos_dim), True, "pos_emb"),
            _gru(rng, c.word_dim + c.pos_dim, c.word_hidden, "word_fwd"),
            _gru(rng, c.word_dim + c.pos_dim, c.word_hidden, "word_bwd"),
            Tensor(glorot(rng, 2 * c.word_hidden, 1)[:, 0], True, "attn_query"),
        )
        ctx = 2 * c.edu_hidden
        split = SplitEncoderParams(
            _gru(rng, 2 * c.word_hidden, c.edu_hidden, "edu_fwd"),
            _gru(rng, 2 * c.word_hidden, c.edu_hidden, "edu_bwd"),
            Tensor(glorot(rng, ctx, 2 * ctx), True, "conv.weight"),
            Tensor(np.zeros(ctx), True, "conv.bias"),
        )
        se = 2 * c.split_hidden
        dec = DecoderParams(
            _gru(rng, ctx, c.split_hidden, "split_fwd"),
            _gru(rng, ctx, c.split_hidden, "split_bwd"),
            Mlp.create(se, c.decoder_hidden, "none", rng, "dec_init"),
            _gru(rng, 2 * se, c.decoder_hidden, "dec_gru"),
            _head(rng, se, c.decoder_hidden, c.split_mlp, 1, "split_head"),
            _head(rng, se, c.decoder_hidden, c.nuc_mlp, 3, "nuc_head"),
            _head(rng, se, c.decoder_hidden, c.rel_mlp, c.n_relations, "rel_head"),
        )
        return cls(config, vocab, edu, split, dec)

    def parameters(self) -> dict:
        """Every parameter block by name, in a fixed order (frozen blocks included)."""
        out = {}

        def add(t: Tensor):
            out[t.name] = t

        e, s, d = self.edu, self.split, self.dec
        for t in (e.word_emb, e.pos_emb, e.fwd.weight, e.fwd.bias, e.bwd.weight, e.bwd.bias, e.query,
                  s.fwd.weight, s.fwd.bias, s.bwd.weight, s.bwd.bias, s.conv_weight, s.conv_bias,
                  d.fwd.weight, d.fwd.bias, d.bwd.weight, d.bwd.bias, d.init.weight, d.init.bias,
                  d.cell.weight, d.cell.bias):
            add(t)
        for head in (d.split, d.nuclearity, d.relation):
            for t in (head.enc.weight, head.enc.bias, head.dec.weight, head.dec.bias,
                      head.W, head.U, head.V, head.b):
                add(t)
        return out

    def trainable(self) -> dict:
        return {k: t for k, t in self.parameters().items() if t.requires_grad}

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.zero_grad()

    def snapshot(self) -> dict:
        return {k: t.data.copy() for k, t in self.parameters().items()}

    def restore(self, snap: dict) -> None:
        for k, t in self.parameters().items():
            t.data[...] = snap[k]

    def encode(self, doc: Document, dropout_rate: float = 0.0, rng=None) -> EncodedDocument:
        return encode_document(self.edu, self.split, self.vocab.index(doc), self.config.attention,
                               dropout_rate, rng)

    def decode(self, doc: Document, oracle=None, dropout_rate: float = 0.0, rng=None):
        enc = self.encode(doc, dropout_rate, rng)
        return decode_document(self.dec, enc, oracle, self.vocab.relation_labels(), dropout_rate, rng)

    def decode_reference(self, doc: Document) -> list:
        with no_grad():
            return decode_reference(self.dec, self.encode(doc), self.vocab.relation_labels())

    def parse(self, doc: Document):
        """Free-running prediction of a binary tree."""
        if doc.n_edus == 1:
            return Leaf(0)
        with no_grad():
            decisions = self.decode(doc).decisions
        return decisions_to_tree(decisions, doc.n_edus)
