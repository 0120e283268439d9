"""A synthetic corpus whose marker tokens reveal the gold tree."""
from collections import Counter

from topdown_drs.corpus import SyntheticConfig, build_vocab, generate_synthetic
from topdown_drs.tree import shape_key

docs = generate_synthetic(SyntheticConfig(n_docs=50, edu_count_range=(2, 10), seed=7))
doc = docs[0]
print(doc.doc_id, doc.n_edus, "EDUs")
for k, edu in enumerate(doc.edus):
    print(k, " ".join(tok for tok, _ in edu))
print(shape_key(doc.gold_tree))

vocab = build_vocab(docs)
print(len(vocab.words), "word types,", len(vocab.relations), "relations")

# shapes are drawn uniformly: all 5 four-leaf shapes turn up about equally often
many = generate_synthetic(SyntheticConfig(n_docs=1000, edu_count_range=(4, 4), seed=1, filler_range=(0, 0)))
print(Counter(shape_key(d.gold_tree) for d in many))
