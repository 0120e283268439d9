import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topdown_drs.numerics import (AdamState, GruCell, Mlp, ShapeError, Tensor, adam_update, attention_pool,
                                  bigru_run, biaffine, concat, conv_width2, dropout, finite_diff_check,
                                  gru_step, make_rng, mlp_apply, no_grad, row, softmax_nll, stack, take_rows,
                                  weighted_sum)


def scalar_gru(W, b, x, h):
    """Loop-level GRU written independently of the vectorised one."""
    H = len(h)
    I = len(x)
    xh = list(x) + list(h)
    z = [0.0] * H
    r = [0.0] * H
    for j in range(H):
        az = b[j] + sum(W[j][c] * xh[c] for c in range(I + H))
        ar = b[H + j] + sum(W[H + j][c] * xh[c] for c in range(I + H))
        z[j] = 1.0 / (1.0 + math.exp(-az))
        r[j] = 1.0 / (1.0 + math.exp(-ar))
    out = []
    for j in range(H):
        a = b[2 * H + j]
        a += sum(W[2 * H + j][c] * x[c] for c in range(I))
        a += sum(W[2 * H + j][I + c] * r[c] * h[c] for c in range(H))
        n = math.tanh(a)
        out.append(z[j] * h[j] + (1.0 - z[j]) * n)
    return out


def random_cell(rng, i, h, scale=0.5):
    cell = GruCell.create(i, h, rng)
    cell.bias.data[...] = rng.uniform(-scale, scale, cell.bias.shape)
    return cell


def test_gru_zero_params_stay_at_zero():
    cell = GruCell.create(4, 3)
    out = gru_step(cell, np.array([1.0, -2.0, 3.0, 0.5]), np.zeros(3))
    assert np.array_equal(out.data, np.zeros(3))


def test_gru_saturated_gates_reduce_to_candidate():
    rng = make_rng(3)
    cell = random_cell(rng, 2, 3)
    H = 3
    cell.bias.data[:H] = -60.0       # update gate shut
    cell.bias.data[H:2 * H] = 60.0   # reset gate open
    x, h = rng.normal(size=2), rng.normal(size=3)
    W = cell.weight.data
    expected = np.tanh(W[2 * H:, :2] @ x + W[2 * H:, 2:] @ h + cell.bias.data[2 * H:])
    np.testing.assert_allclose(gru_step(cell, x, h).data, expected, atol=1e-12)


def test_gru_matches_scalar_oracle():
    rng = make_rng(11)
    cell = random_cell(rng, 3, 3)
    x, h = rng.normal(size=3), rng.normal(size=3)
    expected = scalar_gru(cell.weight.data.tolist(), cell.bias.data.tolist(), x.tolist(), h.tolist())
    np.testing.assert_allclose(gru_step(cell, x, h).data, expected, rtol=0, atol=1e-12)


def test_gru_dimension_errors_name_operand():
    cell = GruCell.create(3, 2)
    with pytest.raises(ShapeError, match="input x.*\\(3,\\)"):
        gru_step(cell, np.zeros(4), np.zeros(2))
    with pytest.raises(ShapeError, match="h_prev"):
        gru_step(cell, np.zeros(3), np.zeros(5))


def test_bigru_single_step():
    rng = make_rng(2)
    f, b = random_cell(rng, 3, 2), random_cell(rng, 3, 2)
    x0 = rng.normal(size=3)
    outs, lf, lb = bigru_run(f, b, [x0])
    expected = np.concatenate([gru_step(f, x0, np.zeros(2)).data, gru_step(b, x0, np.zeros(2)).data])
    assert np.array_equal(outs[0].data, expected)
    assert np.array_equal(lf.data, expected[:2]) and np.array_equal(lb.data, expected[2:])


def test_bigru_zero_params():
    outs, _, _ = bigru_run(GruCell.create(2, 3), GruCell.create(2, 3), [np.ones(2)] * 4)
    assert all(np.array_equal(o.data, np.zeros(6)) for o in outs)


@pytest.mark.parametrize("seed,length", [(0, 4), (1, 1), (2, 7)])
def test_bigru_matches_loop_oracle(seed, length):
    rng = make_rng(seed)
    f, b = random_cell(rng, 3, 2), random_cell(rng, 3, 2)
    xs = [rng.normal(size=3) for _ in range(length)]
    fw, h = [], np.zeros(2)
    for x in xs:
        h = scalar_gru(f.weight.data.tolist(), f.bias.data.tolist(), x.tolist(), list(h))
        fw.append(h)
    bw, h = [None] * length, np.zeros(2)
    for i in reversed(range(length)):
        h = scalar_gru(b.weight.data.tolist(), b.bias.data.tolist(), xs[i].tolist(), list(h))
        bw[i] = h
    outs, lf, lb = bigru_run(f, b, xs)
    for o, a, c in zip(outs, fw, bw):
        np.testing.assert_allclose(o.data, np.concatenate([a, c]), atol=1e-12)
    # and bit-for-bit against an explicit loop over gru_step
    h = np.zeros(2)
    for i, x in enumerate(xs):
        h = gru_step(f, x, h).data
        assert np.array_equal(outs[i].data[:2], h)
    np.testing.assert_array_equal(lf.data, h)


def test_bigru_rejects_empty():
    with pytest.raises(ShapeError):
        bigru_run(GruCell.create(2, 2), GruCell.create(2, 2), [])


def test_conv_maps_padded_sequence_to_split_points():
    rng = make_rng(0)
    n = 7
    X = rng.normal(size=(n + 2, 4))
    out = conv_width2(rng.normal(size=(5, 8)), np.zeros(5), X)
    assert out.shape == (n + 1, 5)


def test_conv_zero_weights():
    out = conv_width2(np.zeros((3, 4)), np.zeros(3), np.ones((5, 2)))
    assert np.array_equal(out.data, np.zeros((4, 3)))


def test_conv_hand_computed_window():
    W = np.array([[1.0, -2.0, 0.5, 3.0], [-1.0, 0.0, 2.0, -4.0]])
    b = np.array([0.25, -0.5])
    X = np.array([[1.0, 2.0], [3.0, -1.0]])
    # [1, 2, 3, -1]: row0 = 1 - 4 + 1.5 - 3 + 0.25 = -4.25 -> 0; row1 = -1 + 6 + 4 - 0.5 = 8.5
    assert conv_width2(W, b, X).data.tolist() == [[0.0, 8.5]]


def test_conv_needs_two_inputs():
    with pytest.raises(ShapeError):
        conv_width2(np.zeros((2, 4)), np.zeros(2), np.ones((1, 2)))


@given(st.integers(2, 9))
def test_conv_length_is_input_minus_one(n):
    assert conv_width2(np.ones((2, 6)), np.zeros(2), np.ones((n, 3))).shape == (n - 1, 2)


def test_mlp_identity_and_bias_only():
    p = Mlp(Tensor(np.eye(3)), Tensor(np.zeros(3)), "relu")
    x = np.array([0.0, 1.5, 2.0])
    assert np.array_equal(mlp_apply(p, x).data, x)
    q = Mlp(Tensor(np.zeros((2, 3))), Tensor(np.array([-1.0, 2.0])), "relu")
    assert mlp_apply(q, np.array([5.0, -3.0, 1.0])).data.tolist() == [0.0, 2.0]


def test_mlp_hand_computed():
    rng = make_rng(4)
    W, b, x = rng.normal(size=(3, 4)), rng.normal(size=3), rng.normal(size=4)
    expected = [sum(W[i, j] * x[j] for j in range(4)) + b[i] for i in range(3)]
    p = Mlp(Tensor(W), Tensor(b), "none")
    np.testing.assert_allclose(mlp_apply(p, x).data, expected, atol=1e-12)
    with pytest.raises(ShapeError):
        mlp_apply(p, np.zeros(5))


def test_softmax_nll_uniform():
    loss = softmax_nll(np.full(6, 0.7), 2)
    assert float(loss.data) == pytest.approx(math.log(6), abs=1e-12)
    np.testing.assert_allclose(loss.extra, np.full(6, 1 / 6), atol=1e-15)


def test_softmax_nll_two_logits():
    loss = softmax_nll(np.array([10.0, -10.0]), 0)
    expected = math.log1p(math.exp(-20.0))          # 2.0611536e-9
    assert float(loss.data) == pytest.approx(expected, rel=1e-6)
    assert loss.extra[0] == pytest.approx(1 - 2.0611536e-9, abs=1e-15)


def test_softmax_nll_saturation_and_range():
    assert float(softmax_nll(np.array([1.0, 30.0, -5.0]), 1).data) < 1e-3
    with pytest.raises(IndexError):
        softmax_nll(np.zeros(3), 3)


@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=20), st.data())
def test_softmax_probabilities_normalised(scores, data):
    gold = data.draw(st.integers(0, len(scores) - 1))
    probs = softmax_nll(np.array(scores), gold).extra
    assert np.all(probs >= 0)
    assert abs(probs.sum() - 1.0) <= 1e-9


def test_attention_single_word_and_zero_query():
    H = np.array([[1.0, -2.0]])
    out = attention_pool(H, np.array([0.3, 0.1]))
    assert out.extra.tolist() == [1.0]
    H = make_rng(0).normal(size=(4, 3))
    out = attention_pool(H, np.zeros(3))
    np.testing.assert_allclose(out.extra, np.full(4, 0.25))
    np.testing.assert_allclose(out.data, H.mean(axis=0), atol=1e-15)


def test_attention_ratio_mode():
    H = np.array([[1.0, 0.0], [0.0, 3.0]])
    out = attention_pool(H, np.array([1.0, 1.0]), mode="ratio")
    np.testing.assert_allclose(out.extra, [0.25, 0.75])


def test_biaffine_degenerate_cases():
    rng = make_rng(5)
    E, d = rng.normal(size=(4, 3)), rng.normal(size=2)
    b = np.array([0.5, -1.0])
    out = biaffine(E, d, np.zeros((3, 2, 2)), np.zeros((2, 3)), np.zeros((2, 2)), b)
    assert np.array_equal(out.data, np.tile(b, (4, 1)))
    u = rng.normal(size=(1, 3))
    out = biaffine(E, d, np.zeros((3, 1, 2)), u, np.zeros((1, 2)), np.zeros(1))
    np.testing.assert_allclose(out.data[:, 0], E @ u[0], atol=1e-15)


def test_biaffine_matches_index_loops():
    rng = make_rng(6)
    m, k, n, c = 3, 2, 4, 3
    E, d = rng.normal(size=(c, m)), rng.normal(size=n)
    W, U, V, b = rng.normal(size=(m, k, n)), rng.normal(size=(k, m)), rng.normal(size=(k, n)), rng.normal(size=k)
    out = biaffine(E, d, W, U, V, b).data
    for i in range(c):
        for a in range(k):
            s = b[a]
            for p in range(m):
                s += U[a, p] * E[i, p]
                for q in range(n):
                    s += E[i, p] * W[p, a, q] * d[q]
            for q in range(n):
                s += V[a, q] * d[q]
            assert abs(out[i, a] - s) <= 1e-12


def _params(rng, **shapes):
    return {k: Tensor(rng.normal(size=s), True, k) for k, s in shapes.items()}


def test_finite_diff_quadratic():
    p = Tensor(make_rng(0).normal(size=10), True, "p")
    rep = finite_diff_check(lambda: weighted_sum([(0.5, _square(p))]), {"p": p}, 1e-5, 1e-7)
    assert rep.passed, rep.errors


def _square(p):
    # ||p||^2 as a biaffine score with an identity bilinear form
    n = p.shape[0]
    W = np.eye(n)[:, None, :]
    return biaffine(stack([p]), p, W, np.zeros((1, n)), np.zeros((1, n)), np.zeros(1))


def test_finite_diff_gru_step():
    rng = make_rng(1)
    cell = random_cell(rng, 3, 4)
    x = Tensor(rng.normal(size=3), True, "x")
    h = Tensor(rng.normal(size=4), True, "h")

    def loss():
        out = gru_step(cell, x, h)
        return _sum(out)

    rep = finite_diff_check(loss, {"W": cell.weight, "b": cell.bias, "x": x, "h": h}, 1e-5, 1e-4)
    assert rep.passed, rep.errors


def _sum(v):
    n = v.shape[0]
    return biaffine(stack([v]), np.ones(1), np.zeros((n, 1, 1)), np.ones((1, n)), np.zeros((1, 1)),
                    np.zeros(1))


@pytest.mark.parametrize("mode", ["softmax", "ratio"])
def test_finite_diff_layers(mode):
    rng = make_rng(7)
    P = _params(rng, X=(5, 3), Wc=(4, 6), bc=(4,), Wm=(3, 4), bm=(3,), q=(3,), Wb=(3, 2, 3), U=(2, 3),
                V=(2, 3), bb=(2,), d=(3,))
    if mode == "ratio":
        P["q"].data[...] = np.abs(P["q"].data) + 0.5
        P["X"].data[...] = np.abs(P["X"].data) + 0.1

    def loss():
        Y = conv_width2(P["Wc"], P["bc"], P["X"])
        Z = mlp_apply(Mlp(P["Wm"], P["bm"], "relu"), Y)
        pooled = attention_pool(Z if mode == "softmax" else P["X"], P["q"], mode)
        rows = take_rows(Z, [0, 2, 2])
        S = biaffine(rows, concat(pooled), P["Wb"], P["U"], P["V"], P["bb"])
        return weighted_sum([(1.0, softmax_nll(_row(S, 0), 1)), (0.5, softmax_nll(_row(S, 2), 0))])

    rep = finite_diff_check(loss, P, 1e-5, 1e-4)
    assert rep.passed, rep.errors


def _row(S, i):
    return row(S, i)


def test_finite_diff_dropout_with_fixed_mask():
    x = Tensor(make_rng(0).normal(size=6), True, "x")

    def loss():
        return softmax_nll(dropout(x, 0.5, make_rng(3)), 2)

    assert finite_diff_check(loss, {"x": x}, 1e-5, 1e-6).passed


def test_finite_diff_detects_broken_backward(monkeypatch):
    import topdown_drs.numerics as nm
    rng = make_rng(1)
    cell = random_cell(rng, 2, 3)
    x = Tensor(rng.normal(size=2), True, "x")
    original = nm.gru_step

    def broken(cell, x, h):
        out = original(cell, x, h)
        real = out._backward
        out._backward = lambda g: [None if a is None else 1.5 * a for a in real(g)]
        return out

    rep = finite_diff_check(lambda: _sum(broken(cell, x, np.zeros(3))), {"W": cell.weight, "x": x})
    assert not rep.passed


def test_finite_diff_argument_checks():
    p = Tensor(np.ones(2), True, "p")
    with pytest.raises(ValueError):
        finite_diff_check(lambda: _sum(p), {"p": p}, epsilon=1e-2)
    with pytest.raises(FloatingPointError):
        finite_diff_check(lambda: softmax_nll(np.array([np.nan, 1.0]), 0), {"p": p})


def test_adam_first_step_closed_form():
    p = {"w": Tensor(np.array([1.0, -2.0, 0.5]), True, "w")}
    g = np.array([0.3, -4.0, 1e-3])
    adam_update(p, {"w": g}, AdamState(), learning_rate=0.01)
    # bias-corrected m/sqrt(v) = g/|g| at t = 1
    expected = np.array([1.0, -2.0, 0.5]) - 0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p["w"].data, expected, atol=1e-15)


def test_adam_zero_gradient_leaves_params_and_decays_moments():
    p = {"w": Tensor(np.array([1.0, 2.0]), True, "w")}
    st_ = AdamState(step=3, m={"w": np.array([0.0, 0.0])}, v={"w": np.array([0.0, 0.0])})
    adam_update(p, {"w": np.zeros(2)}, st_)
    assert p["w"].data.tolist() == [1.0, 2.0]
    st_ = AdamState(step=1, m={"w": np.array([1.0, 1.0])}, v={"w": np.array([1.0, 1.0])})
    adam_update(p, {}, st_)
    np.testing.assert_allclose(st_.m["w"], [0.9, 0.9])
    np.testing.assert_allclose(st_.v["w"], [0.999, 0.999])


def test_adam_quadratic_descent_is_monotone():
    w = {"w": Tensor(np.array([3.0]), True, "w")}
    state, losses = AdamState(), []
    for _ in range(10):
        losses.append(0.5 * float(w["w"].data[0]) ** 2)
        adam_update(w, {"w": w["w"].data.copy()}, state, learning_rate=0.1)
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_adam_rejects_non_finite():
    p = {"blk": Tensor(np.ones(2), True, "blk")}
    with pytest.raises(FloatingPointError, match="blk"):
        adam_update(p, {"blk": np.array([np.inf, 0.0])}, AdamState())


def test_rng_reproducible():
    assert np.array_equal(make_rng(42).random(5), make_rng(42).random(5))


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), True)
    with no_grad():
        y = concat(x, x)
    assert not y.requires_grad and y._parents == ()
