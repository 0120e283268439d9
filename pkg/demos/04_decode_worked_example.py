"""Decoding with hand-set weights: the split score of point k falls with the depth of
the node that splits there, so the decoder reproduces the worked example."""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from helpers import seven_edu_document, rigged_seven_edu_model  # noqa: E402

from topdown_drs.numerics import no_grad  # noqa: E402
from topdown_drs.tree import shape_key  # noqa: E402

model = rigged_seven_edu_model()
doc = seven_edu_document(with_tree=False)
with no_grad():
    decoding = model.decode(doc)

for step in decoding.steps:
    scores = ", ".join(f"{c}:{s:+.3f}" for c, s in zip(step.candidates, step.split_scores.data))
    print(f"frame {step.frame}  scores [{scores}]  -> split {step.decision.split}")

print(shape_key(model.parse(doc)))
