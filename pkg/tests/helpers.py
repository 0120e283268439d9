"""Shared fixtures: a 7-EDU tree shaped like the worked example and a model
whose split scores are rigged to reproduce it."""
import numpy as np

from topdown_drs.corpus import Document, SyntheticConfig, build_vocab, generate_synthetic, relation_names
from topdown_drs.model import Model, profile
from topdown_drs.tree import Leaf, binary

# Root split at 3, as in the worked example; the lower splits are our choice.
SEVEN_EDU_TREE = binary(
    binary(Leaf(0), binary(Leaf(1), Leaf(2), "NN", "Joint"), "NS", "Elaboration"),
    binary(binary(Leaf(3), Leaf(4), "SN", "Condition"),
           binary(Leaf(5), Leaf(6), "NS", "Explanation"), "NN", "Contrast"),
    "NS", "Cause")
SEVEN_EDU_SPLITS = [(0, 7, 3), (0, 3, 1), (1, 3, 2), (3, 7, 5), (3, 5, 4), (5, 7, 6)]
# depth of the node that splits between EDU k-1 and k
SEVEN_EDU_DEPTH = {3: 0, 1: 1, 5: 1, 2: 2, 4: 2, 6: 2}


def seven_edu_document(with_tree=True) -> Document:
    edus = tuple(((f"p{k}", "X"),) for k in range(7))
    return Document("seven-edu-example", edus, SEVEN_EDU_TREE if with_tree else None)


def _passthrough(cell, in_index=0, out_index=0, gain=1.0):
    """Make a GRU cell copy tanh(gain * x[in_index]) into h[out_index]."""
    H = cell.hidden_dim
    cell.weight.data[...] = 0.0
    cell.bias.data[...] = 0.0
    cell.bias.data[:H] = -40.0                      # update gate closed: take the candidate
    cell.weight.data[2 * H + out_index, in_index] = gain


def _silence(cell):
    cell.weight.data[...] = 0.0
    cell.bias.data[...] = 0.0


def rigged_seven_edu_model(profile_name="tiny") -> Model:
    """Split score of point k grows with 1 - 0.2 * depth(k)."""
    doc = seven_edu_document()
    vocab = build_vocab([doc])
    model = Model.create(profile(profile_name), vocab, seed=0)
    for t in model.parameters().values():
        t.data[...] = 0.0
    emb = model.edu.word_emb.data
    for k in range(1, 7):
        emb[vocab.words[f"p{k}"], 0] = 1.0 - 0.2 * SEVEN_EDU_DEPTH[k]
    _passthrough(model.edu.fwd)
    _silence(model.edu.bwd)
    _passthrough(model.split.fwd)
    _silence(model.split.bwd)
    ctx = model.split.fwd.hidden_dim + model.split.bwd.hidden_dim
    model.split.conv_weight.data[0, ctx] = 1.0      # EDU right of the split point
    _passthrough(model.dec.fwd)
    _silence(model.dec.bwd)
    model.dec.split.enc.weight.data[0, 0] = 1.0
    model.dec.split.U.data[0, 0] = 1.0
    return model


def random_binary_tree(rng: np.random.Generator, lo: int, hi: int, labels=("a", "b", "c")):
    if hi - lo == 1:
        return Leaf(lo)
    m = int(rng.integers(lo + 1, hi))
    return binary(random_binary_tree(rng, lo, m, labels), random_binary_tree(rng, m, hi, labels),
                  ("NN", "NS", "SN")[int(rng.integers(3))], labels[int(rng.integers(len(labels)))])


def random_model_and_document(seed: int, lo: int = 2, hi: int = 12):
    """A randomly initialised tiny model and a synthetic document with lo..hi EDUs."""
    doc = generate_synthetic(SyntheticConfig(n_docs=1, edu_count_range=(lo, hi), seed=seed))[0]
    vocab = build_vocab([doc], relations=relation_names(16))
    return Model.create(profile("tiny"), vocab, seed=seed), doc
