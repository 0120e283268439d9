"""The numeric core: one GRU step, its gradient, and a finite-difference check."""
import numpy as np

from topdown_drs.numerics import GruCell, Tensor, finite_diff_check, gru_step, make_rng, softmax_nll

rng = make_rng(0)
cell = GruCell.create(input_dim=3, hidden_dim=4, rng=rng, name="cell")
x = Tensor(rng.normal(size=3), requires_grad=True, name="x")
h0 = np.zeros(4)

h1 = gru_step(cell, x, h0)
print("h1 =", np.round(h1.data, 4))

# a scalar loss on top: pretend the hidden state scores 4 classes
loss = softmax_nll(h1, gold_index=2)
loss.backward()
print("loss =", round(float(loss.data), 6))
print("d loss / d x =", np.round(x.grad, 6))

# central differences agree with the tape
x.zero_grad()
report = finite_diff_check(lambda: softmax_nll(gru_step(cell, x, h0), 2),
                           {"W": cell.weight, "b": cell.bias, "x": x})
for name, err in report.errors.items():
    print(f"{name:2} max relative error {err:.1e} over {report.samples[name]} coordinates")
