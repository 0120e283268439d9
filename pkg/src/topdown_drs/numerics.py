"""Dense float64 tensors with a small reverse-mode tape.

Every differentiable layer the parser needs (GRU step, width-2 convolution,
MLP, attention pooling, biaffine scoring, softmax NLL) is a single primitive
here with a hand-written backward pass.  Composition is handled by a tape
built implicitly from each output's parents.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

DTYPE = np.float64
RNG_ALGORITHM = "numpy.PCG64"

_local = threading.local()


def grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


class ShapeError(ValueError):
    pass


class Tensor:
    """A float64 array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "extra")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward = None
        self.extra = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        return self.data.reshape(-1)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True).reshape(self.data.shape)
        else:
            self.grad += g.reshape(self.data.shape)

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Propagate gradients from this tensor to every leaf that requires them."""
        if seed is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(seed, dtype=DTYPE).reshape(self.data.shape)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _check_dim(name: str, arr: np.ndarray, expected: tuple) -> None:
    if arr.shape != expected:
        raise ShapeError(f"{name}: expected shape {expected}, got {arr.shape}")


# --- structural ops -------------------------------------------------------

def concat(*parts, axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    sizes = [p.data.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(parts))]

    return _result(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


def stack(rows) -> Tensor:
    rows = tuple(as_tensor(r) for r in rows)

    def backward(g):
        return list(g)

    return _result(np.stack([r.data for r in rows]), rows, backward)


def take_rows(m, index) -> Tensor:
    """Rows ``index`` of a matrix as a new matrix (gradient scatter-adds back)."""
    m = as_tensor(m)
    index = np.asarray(index, dtype=np.intp)

    def backward(g):
        full = np.zeros_like(m.data)
        np.add.at(full, index, g)
        return [full]

    return _result(m.data[index], (m,), backward)


def row(m, i: int) -> Tensor:
    m = as_tensor(m)

    def backward(g):
        full = np.zeros_like(m.data)
        full[i] = g
        return [full]

    return _result(m.data[i].copy(), (m,), backward)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return [g.reshape(x.data.shape)]

    return _result(x.data.reshape(shape), (x,), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return [g, g]

    return _result(a.data + b.data, (a, b), backward)


def weighted_sum(terms) -> Tensor:
    """Sum of ``weight * scalar_tensor`` over ``(weight, tensor)`` pairs."""
    weights = [float(w) for w, _ in terms]
    tensors = tuple(as_tensor(t) for _, t in terms)
    total = np.zeros((), dtype=DTYPE)
    for w, t in zip(weights, tensors):
        total = total + w * t.data.reshape(())

    def backward(g):
        return [np.full(t.data.shape, w * float(g)) for w, t in zip(weights, tensors)]

    return _result(total, tensors, backward)


def dropout(x, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is zero."""
    x = as_tensor(x)
    if rng is None or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.data.shape) < keep) / keep

    def backward(g):
        return [g * mask]

    return _result(x.data * mask, (x,), backward)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# --- layers ---------------------------------------------------------------

@dataclass
class GruCell:
    """Gate weights stacked as [update; reset; candidate], each hidden x (input + hidden)."""

    weight: Tensor
    bias: Tensor

    @property
    def hidden_dim(self) -> int:
        return self.weight.shape[0] // 3

    @property
    def input_dim(self) -> int:
        return self.weight.shape[1] - self.hidden_dim

    @classmethod
    def create(cls, input_dim: int, hidden_dim: int, rng=None, name: str = "gru") -> "GruCell":
        w = np.zeros((3 * hidden_dim, input_dim + hidden_dim))
        if rng is not None:
            for g in range(3):
                w[g * hidden_dim:(g + 1) * hidden_dim] = glorot(rng, hidden_dim, input_dim + hidden_dim)
        return cls(Tensor(w, True, f"{name}.weight"), Tensor(np.zeros(3 * hidden_dim), True, f"{name}.bias"))


def gru_step(cell: GruCell, x, h_prev) -> Tensor:
    """One GRU transition.

    z = sigmoid(Wz [x; h] + bz), r = sigmoid(Wr [x; h] + br),
    n = tanh(Wn [x; r*h] + bn), h_new = z*h + (1 - z)*n.
    """
    x, h_prev = as_tensor(x), as_tensor(h_prev)
    H, I = cell.hidden_dim, cell.input_dim
    _check_dim("gru_step input x", x.data, (I,))
    _check_dim("gru_step hidden h_prev", h_prev.data, (H,))
    W, b = cell.weight.data, cell.bias.data
    xv, hv = x.data, h_prev.data
    xh = np.concatenate([xv, hv])
    zr = sigmoid(W[:2 * H] @ xh + b[:2 * H])
    z, r = zr[:H], zr[H:]
    rh = r * hv
    xrh = np.concatenate([xv, rh])
    n = np.tanh(W[2 * H:] @ xrh + b[2 * H:])
    h_new = z * hv + (1.0 - z) * n

    def backward(g):
        dz = g * (hv - n)
        dn = g * (1.0 - z)
        dh = g * z
        dan = dn * (1.0 - n * n)
        Wn = W[2 * H:]
        d_xrh = Wn.T @ dan
        drh = d_xrh[I:]
        dr = drh * hv
        dh = dh + drh * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        dazr = np.concatenate([daz, dar])
        d_xh = W[:2 * H].T @ dazr
        dx = d_xh[:I] + d_xrh[:I]
        dh = dh + d_xh[I:]
        dW = np.empty_like(W)
        dW[:2 * H] = np.outer(dazr, xh)
        dW[2 * H:] = np.outer(dan, xrh)
        db = np.concatenate([dazr, dan])
        return [dx, dh, dW, db]

    return _result(h_new, (x, h_prev, cell.weight, cell.bias), backward)


def bigru_run(fwd: GruCell, bwd: GruCell, inputs):
    """Run a bidirectional GRU from zero initial states.

    Returns ``(outputs, last_fwd, last_bwd)`` where ``outputs[i]`` concatenates
    the forward and backward states at ``i``, ``last_fwd`` is the forward state
    at the final position and ``last_bwd`` the backward state at position 0.
    """
    inputs = [as_tensor(v) for v in inputs]
    if not inputs:
        raise ShapeError("bigru_run needs a non-empty input sequence")
    h = Tensor(np.zeros(fwd.hidden_dim))
    forward = []
    for x in inputs:
        h = gru_step(fwd, x, h)
        forward.append(h)
    h = Tensor(np.zeros(bwd.hidden_dim))
    backward = [None] * len(inputs)
    for i in range(len(inputs) - 1, -1, -1):
        h = gru_step(bwd, inputs[i], h)
        backward[i] = h
    outputs = [concat(f, b) for f, b in zip(forward, backward)]
    return outputs, forward[-1], backward[0]


def conv_width2(weight, bias, inputs) -> Tensor:
    """out[i] = relu(W [x_i; x_{i+1}] + b) over a row-stacked sequence."""
    weight, bias, inputs = as_tensor(weight), as_tensor(bias), as_tensor(inputs)
    X = inputs.data
    if X.ndim != 2 or X.shape[0] < 2:
        raise ShapeError(f"conv_width2 needs a sequence of at least 2 vectors, got shape {X.shape}")
    D = X.shape[1]
    O = weight.data.shape[0]
    _check_dim("conv_width2 weight", weight.data, (O, 2 * D))
    _check_dim("conv_width2 bias", bias.data, (O,))
    pairs = np.concatenate([X[:-1], X[1:]], axis=1)
    pre = pairs @ weight.data.T + bias.data
    out = np.maximum(pre, 0.0)

    def backward(g):
        ga = g * (pre > 0)
        dpairs = ga @ weight.data
        dX = np.zeros_like(X)
        dX[:-1] += dpairs[:, :D]
        dX[1:] += dpairs[:, D:]
        return [ga.T @ pairs, ga.sum(axis=0), dX]

    return _result(out, (weight, bias, inputs), backward)


@dataclass
class Mlp:
    weight: Tensor
    bias: Tensor
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")
        out_dim, in_dim = self.weight.shape
        if out_dim <= 0 or in_dim <= 0:
            raise ShapeError("MLP dimensions must be positive")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def create(cls, in_dim: int, out_dim: int, activation="relu", rng=None, name="mlp") -> "Mlp":
        w = glorot(rng, out_dim, in_dim) if rng is not None else np.zeros((out_dim, in_dim))
        return cls(Tensor(w, True, f"{name}.weight"), Tensor(np.zeros(out_dim), True, f"{name}.bias"), activation)


def mlp_apply(p: Mlp, x) -> Tensor:
    """relu(W x + b) or W x + b; ``x`` may be a vector or a matrix of row vectors."""
    x = as_tensor(x)
    if x.data.shape[-1] != p.in_dim:
        raise ShapeError(f"mlp input: expected last dimension {p.in_dim}, got shape {x.data.shape}")
    W = p.weight.data
    pre = x.data @ W.T + p.bias.data
    relu = p.activation == "relu"
    out = np.maximum(pre, 0.0) if relu else pre

    def backward(g):
        ga = g * (pre > 0) if relu else g
        if x.data.ndim == 1:
            return [ga @ W, np.outer(ga, x.data), ga]
        return [ga @ W, ga.T @ x.data, ga.sum(axis=0)]

    return _result(out, (x, p.weight, p.bias), backward)


def attention_pool(states, query, mode: str = "softmax") -> Tensor:
    """Weighted sum of row vectors, weights normalised from query·state.

    ``mode="softmax"`` exponentiates before normalising; ``mode="ratio"``
    divides the raw dot products by their sum.  The weights are stored on the
    returned tensor's ``extra`` attribute.
    """
    states, query = as_tensor(states), as_tensor(query)
    Hm, q = states.data, query.data
    if Hm.ndim != 2 or Hm.shape[1] != q.shape[0]:
        raise ShapeError(f"attention_pool: states {Hm.shape} incompatible with query {q.shape}")
    a = Hm @ q
    if mode == "softmax":
        e = np.exp(a - a.max())
        w = e / e.sum()
    elif mode == "ratio":
        total = a.sum()
        if total == 0.0:
            raise FloatingPointError("ratio attention undefined: dot products sum to zero")
        w = a / total
    else:
        raise ValueError(f"unknown attention mode {mode!r}")
    pooled = w @ Hm

    def backward(g):
        dw = Hm @ g
        if mode == "softmax":
            da = w * (dw - np.dot(w, dw))
        else:
            da = (dw - np.dot(w, dw)) / total
        dH = np.outer(w, g) + np.outer(da, q)
        dq = Hm.T @ da
        return [dH, dq]

    out = _result(pooled, (states, query), backward)
    out.extra = w
    return out


def biaffine(enc, dec, W, U, V, b) -> Tensor:
    """Scores e^T W d + U e + V d + b for every row e of ``enc``.

    Shapes: enc (c, m), dec (n,), W (m, k, n), U (k, m), V (k, n), b (k,);
    the result is (c, k).
    """
    enc, dec, W, U, V, b = (as_tensor(t) for t in (enc, dec, W, U, V, b))
    E, d = enc.data, dec.data
    if E.ndim == 1:
        raise ShapeError("biaffine: encoder side must be a matrix of rows")
    m, k, n = W.data.shape
    _check_dim("biaffine encoder rows", E, (E.shape[0], m))
    _check_dim("biaffine decoder vector", d, (n,))
    _check_dim("biaffine U", U.data, (k, m))
    _check_dim("biaffine V", V.data, (k, n))
    _check_dim("biaffine b", b.data, (k,))
    Wd = W.data @ d
    out = E @ Wd + E @ U.data.T + (V.data @ d + b.data)

    def backward(g):
        dE = g @ (Wd.T + U.data)
        gsum = g.sum(axis=0)
        EtG = E.T @ g
        dW = EtG[:, :, None] * d[None, None, :]
        dd = np.einsum("pa,paq->q", EtG, W.data) + V.data.T @ gsum
        return [dE, dd, dW, g.T @ E, np.outer(gsum, d), gsum]

    return _result(out, (enc, dec, W, U, V, b), backward)


def softmax(scores: np.ndarray) -> np.ndarray:
    e = np.exp(scores - scores.max())
    return e / e.sum()


def softmax_nll(scores, gold_index: int) -> Tensor:
    """-log softmax(scores)[gold]; the probabilities are kept on ``extra``."""
    scores = as_tensor(scores)
    s = scores.data.reshape(-1)
    if s.size == 0:
        raise ShapeError("softmax_nll needs at least one score")
    if not 0 <= gold_index < s.size:
        raise IndexError(f"gold index {gold_index} out of range for {s.size} scores")
    shifted = s - s.max()
    log_z = np.log(np.exp(shifted).sum())
    logp = shifted - log_z
    probs = np.exp(logp)
    loss = -logp[gold_index]

    def backward(g):
        d = probs.copy()
        d[gold_index] -= 1.0
        return [(float(g) * d).reshape(scores.data.shape)]

    out = _result(np.asarray(loss), (scores,), backward)
    out.extra = probs
    return out


# --- initialisation, optimisation, verification ---------------------------

def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=(fan_out, fan_in))


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(params: dict, grads: dict, state: AdamState, learning_rate: float = 1e-3,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam step, applied to ``params[name].data`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        if m.shape != p.data.shape:
            raise ShapeError(f"moment state for {name!r} has shape {m.shape}, parameter {p.data.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= learning_rate * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


@dataclass
class GradCheckReport:
    errors: dict          # block name -> max relative error
    samples: dict         # block name -> coordinates checked
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e <= self.tolerance for e in self.errors.values())

    def merge(self, other: "GradCheckReport") -> "GradCheckReport":
        errors, samples = dict(self.errors), dict(self.samples)
        for k, e in other.errors.items():
            errors[k] = max(errors.get(k, 0.0), e)
            samples[k] = samples.get(k, 0) + other.samples[k]
        return GradCheckReport(errors, samples, self.tolerance)


def finite_diff_check(loss_fn, params: dict, epsilon: float = 1e-5, tolerance: float = 1e-4,
                      n_samples: int = 200, rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``loss_fn`` takes no arguments and returns a scalar Tensor; it must be
    deterministic.  Up to ``n_samples`` coordinates per block are checked
    (all of them for smaller blocks).  Error is
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if not 1e-6 <= epsilon <= 1e-4:
        raise ValueError("epsilon must lie in [1e-6, 1e-4]")
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    rng = rng if rng is not None else make_rng(0)
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("loss is not finite")
    loss.backward()
    analytic = {k: (p.grad.reshape(-1).copy() if p.grad is not None else np.zeros(p.data.size))
                for k, p in params.items()}

    def evaluate() -> float:
        with no_grad():
            value = loss_fn().data.item()
        if not np.isfinite(value):
            raise FloatingPointError("loss is not finite under perturbation")
        return value

    errors, samples = {}, {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        size = flat.size
        coords = np.arange(size) if size <= n_samples else rng.choice(size, n_samples, replace=False)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + epsilon
            up = evaluate()
            flat[c] = orig - epsilon
            down = evaluate()
            flat[c] = orig
            numeric = (up - down) / (2.0 * epsilon)
            a = analytic[name][c]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
        errors[name] = worst
        samples[name] = len(coords)
    for p in params.values():
        p.zero_grad()
    return GradCheckReport(errors, samples, tolerance)
