"""Corpus I/O, vocabularies, embeddings and the synthetic corpus generator.

Corpora are JSON lines, one document per line::

    {"doc_id": "d1",
     "edus": [[["The", "DT"], ["cat", "NN"]], ...],
     "tree": {"children": [{"edu": 0}, {"edu": 1}],
              "nuclearity": "NS", "relation": "Elaboration"}}

``tree`` may be omitted or null for unannotated input.  Internal nodes may
have more than two children; they are binarised right-branching on use.
"""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .numerics import make_rng
from .tree import Leaf, Node, NUCLEARITY, TreeError, binarize_right, validate

log = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"
DUMMY_POS = "X"


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Document:
    doc_id: str
    edus: tuple                       # tuple of EDUs, each a tuple of (token, pos)
    gold_tree: object = None          # Leaf | Node | None, possibly n-ary

    def __post_init__(self):
        if not self.edus:
            raise CorpusError(f"{self.doc_id}: document has no EDUs")
        for i, edu in enumerate(self.edus):
            if not edu:
                raise CorpusError(f"{self.doc_id}: EDU {i} is empty")

    @property
    def n_edus(self) -> int:
        return len(self.edus)

    @property
    def binary_tree(self):
        return None if self.gold_tree is None else binarize_right(self.gold_tree)


# --- JSON tree format ------------------------------------------------------

def tree_from_json(obj):
    if "edu" in obj:
        return Leaf(int(obj["edu"]))
    children = obj.get("children")
    if not isinstance(children, list):
        raise TreeError("internal node without a children list")
    return Node(tuple(tree_from_json(c) for c in children), obj.get("nuclearity"), obj.get("relation"))


def tree_to_json(t) -> dict:
    if isinstance(t, Leaf):
        return {"edu": t.edu}
    out = {"children": [tree_to_json(c) for c in t.children], "nuclearity": t.nuclearity}
    if t.relation is not None:
        out["relation"] = t.relation
    return out


def document_to_json(doc: Document) -> dict:
    return {
        "doc_id": doc.doc_id,
        "edus": [[[tok, pos] for tok, pos in edu] for edu in doc.edus],
        "tree": None if doc.gold_tree is None else tree_to_json(doc.gold_tree),
    }


def document_from_json(obj: dict, ignore_pos: bool = False) -> Document:
    doc_id = str(obj["doc_id"])
    edus = []
    for edu in obj["edus"]:
        pairs = []
        for item in edu:
            tok, pos = item
            pairs.append((str(tok), DUMMY_POS if ignore_pos else str(pos)))
        edus.append(tuple(pairs))
    tree = obj.get("tree")
    tree = None if tree is None else tree_from_json(tree)
    doc = Document(doc_id, tuple(edus), tree)
    if tree is not None:
        n = validate(tree)
        if n != len(edus):
            raise CorpusError(f"{doc_id}: tree spans {n} EDUs but the document has {len(edus)}")
    return doc


def load_corpus(path, format: str = "json_trees", ignore_pos: bool = False) -> list:
    if format != "json_trees":
        raise ValueError(f"unsupported corpus format {format!r}")
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            doc_id = "?"
            try:
                obj = json.loads(line)
                doc_id = obj.get("doc_id", "?")
                docs.append(document_from_json(obj, ignore_pos))
            except (ValueError, KeyError, TypeError, TreeError) as exc:
                raise CorpusError(f"{path}:{lineno}: document {doc_id}: {exc}") from exc
    if not docs:
        log.warning("corpus %s is empty", path)
    return docs


def dump_corpus(docs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(document_to_json(doc), ensure_ascii=False, sort_keys=True) + "\n")


# --- vocabulary ------------------------------------------------------------

def _ranked(counter: Counter, min_count: int = 1) -> list:
    return [k for k, c in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0])) if c >= min_count]


@dataclass
class Vocabulary:
    words: dict
    pos: dict
    relations: dict
    nuclearity: dict = field(default_factory=lambda: {n: i for i, n in enumerate(NUCLEARITY)})

    @property
    def unk(self) -> int:
        return self.words[UNK]

    def relation_labels(self) -> list:
        return sorted(self.relations, key=self.relations.get)

    def word_id(self, token: str) -> int:
        return self.words.get(token, self.words[UNK])

    def pos_id(self, tag: str) -> int:
        return self.pos.get(tag, self.pos[UNK])

    def index(self, doc: Document) -> list:
        """Per EDU, a pair of int arrays (word ids, pos ids)."""
        return [(np.array([self.word_id(t) for t, _ in edu]), np.array([self.pos_id(p) for _, p in edu]))
                for edu in doc.edus]

    def unknown_rate(self, docs) -> float:
        total = unk = 0
        for doc in docs:
            for edu in doc.edus:
                for tok, _ in edu:
                    total += 1
                    unk += tok not in self.words
        return unk / total if total else 0.0

    def to_dict(self) -> dict:
        return {"words": self.words, "pos": self.pos, "relations": self.relations, "nuclearity": self.nuclearity}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(dict(d["words"]), dict(d["pos"]), dict(d["relations"]), dict(d["nuclearity"]))


def build_vocab(docs, min_token_count: int = 1, relations=None) -> Vocabulary:
    """Frequency-then-lexicographic indices; rare tokens fall back to UNK.

    ``relations`` fixes the relation label inventory; otherwise it is read
    off the gold trees.
    """
    words, tags, rels = Counter(), Counter(), Counter()
    for doc in docs:
        for edu in doc.edus:
            for tok, pos in edu:
                words[tok] += 1
                tags[pos] += 1
        if doc.gold_tree is not None:
            stack = [doc.gold_tree]
            while stack:
                n = stack.pop()
                if isinstance(n, Node):
                    if n.relation is not None:
                        rels[n.relation] += 1
                    stack.extend(n.children)
    word_map = {PAD: 0, UNK: 1}
    for w in _ranked(words, min_token_count):
        word_map.setdefault(w, len(word_map))
    pos_map = {PAD: 0, UNK: 1}
    for p in _ranked(tags):
        pos_map.setdefault(p, len(pos_map))
    labels = list(relations) if relations is not None else sorted(rels)
    return Vocabulary(word_map, pos_map, {r: i for i, r in enumerate(labels)})


# --- embeddings ------------------------------------------------------------

@dataclass
class EmbeddingTable:
    matrix: np.ndarray
    trainable: bool = False
    n_pretrained: int = 0

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def random_embeddings(vocab_size: int, dim: int, seed: int, scale: float = 0.05,
                      trainable: bool = False) -> EmbeddingTable:
    rng = make_rng(seed)
    return EmbeddingTable(rng.uniform(-scale, scale, size=(vocab_size, dim)), trainable)


def load_embeddings(path, vocab: Vocabulary, dim: int = 300, seed: int = 0) -> EmbeddingTable:
    """Read ``token v1 ... v_dim`` lines; tokens absent from the file get
    seeded uniform(-0.05, 0.05) rows.  The table is frozen."""
    table = random_embeddings(len(vocab.words), dim, seed)
    found = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise CorpusError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            idx = vocab.words.get(parts[0])
            if idx is None:
                continue
            table.matrix[idx] = np.array(parts[1:], dtype=np.float64)
            found.add(idx)
    table.n_pretrained = len(found)
    return table


# --- synthetic corpora -----------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    n_docs: int = 50
    edu_count_range: tuple = (2, 10)
    vocab_size: int = 50
    n_relations: int = 16
    seed: int = 0
    filler_range: tuple = (1, 3)

    def validate(self) -> None:
        lo, hi = self.edu_count_range
        if not 2 <= lo <= hi <= 30:
            raise ValueError(f"edu_count_range must satisfy 2 <= lo <= hi <= 30, got {self.edu_count_range}")
        if self.n_docs < 1 or self.vocab_size < 1 or self.n_relations < 1:
            raise ValueError("n_docs, vocab_size and n_relations must be positive")
        flo, fhi = self.filler_range
        if not 0 <= flo <= fhi:
            raise ValueError(f"invalid filler_range {self.filler_range}")


def relation_names(n: int) -> list:
    return [f"rel{i:02d}" for i in range(n)]


def _catalan(n: int) -> int:
    return math.comb(2 * n, n) // (n + 1)


def random_shape(rng: np.random.Generator, lo: int, hi: int, nuclearity, relations):
    """Uniformly random binary tree over leaves lo..hi-1 with random labels."""
    n = hi - lo
    if n == 1:
        return Leaf(lo)
    weights = np.array([_catalan(k - 1) * _catalan(n - k - 1) for k in range(1, n)], dtype=float)
    k = 1 + int(rng.choice(n - 1, p=weights / weights.sum()))
    left = random_shape(rng, lo, lo + k, nuclearity, relations)
    right = random_shape(rng, lo + k, hi, nuclearity, relations)
    return Node((left, right), nuclearity[int(rng.integers(len(nuclearity)))],
                relations[int(rng.integers(len(relations)))])


def _split_markers(tree) -> dict:
    """EDU index right of each split -> (depth, nuclearity, relation) of the node splitting there."""
    out = {}

    def walk(n, start, depth):
        if isinstance(n, Leaf):
            return start + 1
        mid = walk(n.left, start, depth + 1)
        out[mid] = (depth, n.nuclearity, n.relation)
        return walk(n.right, mid, depth + 1)

    walk(tree, 0, 0)
    return out


def generate_synthetic(cfg: SyntheticConfig) -> list:
    """Random binary gold trees over token sequences that reveal them.

    EDU k > 0 opens with three marker tokens naming the depth, nuclearity and
    relation of the node whose split lies between EDUs k-1 and k; EDU 0 opens
    with ``<doc>``.  Filler words follow.  Greedy top-down decoding that
    picks the shallowest marker in each span recovers the gold tree exactly.
    """
    cfg.validate()
    rng = make_rng(cfg.seed)
    rels = relation_names(cfg.n_relations)
    lo, hi = cfg.edu_count_range
    docs = []
    for i in range(cfg.n_docs):
        n = int(rng.integers(lo, hi + 1))
        tree = random_shape(rng, 0, n, NUCLEARITY, rels)
        markers = _split_markers(tree)
        edus = []
        for k in range(n):
            if k == 0:
                edu = [("<doc>", "MK")]
            else:
                depth, nuc, rel = markers[k]
                edu = [(f"D{depth}", "MK"), (f"N{nuc}", "MK"), (f"R{rel}", "MK")]
            n_fill = int(rng.integers(cfg.filler_range[0], cfg.filler_range[1] + 1))
            edu += [(f"w{int(rng.integers(cfg.vocab_size))}", "WD") for _ in range(n_fill)]
            edus.append(tuple(edu))
        docs.append(Document(f"syn{cfg.seed}-{i:05d}", tuple(edus), tree))
    return docs
