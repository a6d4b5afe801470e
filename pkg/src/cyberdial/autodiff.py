"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

The graph is built implicitly: every operation returns a ``Value`` that
remembers its parents and a closure that scatters the incoming gradient
back to them.  ``backward`` walks the graph once in reverse topological
order.  Gradients accumulate additively into ``Value.grad`` until they are
explicitly zeroed, so calling ``backward`` on ``f + f`` doubles every
gradient exactly.

Only the operations needed by the recurrent Q-networks live here: lookup
tables, affine maps, ReLU / logistic, element-wise sums, a fused GRU cell,
and a handful of small gather/reduce helpers.  Everything runs in 64-bit;
there is no broadcasting cleverness beyond what the ops below state.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit as _sigmoid

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph construction inside the block (evaluation / target nets)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Value:
    """A float64 array plus its gradient buffer and tape provenance."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents: tuple = (), backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents if _grad_enabled else ()
        self._backward = backward if _grad_enabled else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def accum_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Value(shape={self.data.shape})"


def constant(data) -> Value:
    """A leaf with no provenance (inputs, targets, routing weights...)."""
    return Value(data)


class ShapeMismatch(ValueError):
    pass


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeMismatch(msg)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def lookup(table: Value, index) -> Value:
    """Row(s) of an embedding table.

    ``index`` is an int (returns shape ``(dim,)``) or an int array of shape
    ``(batch,)`` (returns ``(batch, dim)``).  Backward accumulates only into
    the indexed rows.
    """
    idx = np.asarray(index)
    rows = table.data.shape[0]
    if np.any(idx < 0) or np.any(idx >= rows):
        raise IndexError(f"lookup index out of range: {index!r} for {rows} rows")
    out_data = table.data[idx]

    def backward(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx, g)

    return Value(out_data, (table,), backward)


def affine(x: Value, w: Value, b: Value) -> Value:
    """x @ w + b    with x: (batch, n_in) or (n_in,), w: (n_in, n_out), b: (n_out,)."""
    _check(x.data.shape[-1] == w.data.shape[0], f"affine: {x.shape} @ {w.shape}")
    _check(b.data.shape == (w.data.shape[1],), f"affine bias: {b.shape} vs {w.shape}")
    out_data = x.data @ w.data + b.data

    def backward(g):
        if x.data.ndim == 1:
            x.accum_grad(g @ w.data.T)
            w.accum_grad(np.outer(x.data, g))
            b.accum_grad(g)
        else:
            x.accum_grad(g @ w.data.T)
            w.accum_grad(x.data.T @ g)
            b.accum_grad(g.sum(axis=0))

    return Value(out_data, (x, w, b), backward)


def relu(x: Value) -> Value:
    out_data = np.maximum(x.data, 0.0)

    def backward(g):
        x.accum_grad(g * (x.data > 0.0))

    return Value(out_data, (x,), backward)


def logistic(x: Value) -> Value:
    out_data = _sigmoid(x.data)

    def backward(g):
        x.accum_grad(g * out_data * (1.0 - out_data))

    return Value(out_data, (x,), backward)


def sum_elementwise(*xs: Value) -> Value:
    """Element-wise sum of two or more equally-shaped values."""
    _check(len(xs) >= 2, "sum_elementwise needs at least two operands")
    shape = xs[0].data.shape
    for v in xs[1:]:
        _check(v.data.shape == shape, f"sum_elementwise: {v.shape} vs {shape}")
    out_data = xs[0].data.copy()
    for v in xs[1:]:
        out_data += v.data

    def backward(g):
        for v in xs:
            v.accum_grad(g)

    return Value(out_data, tuple(xs), backward)


def weighted_sum(xs: Sequence[Value], weights: Sequence[np.ndarray]) -> Value:
    """sum_i w_i * x_i with per-row constant weights.

    Each x_i is (batch, dim) and each w_i is (batch,) or a scalar; used to
    route messages between agents (the weights are data, not parameters).
    """
    _check(len(xs) == len(weights) and len(xs) >= 1, "weighted_sum arity")
    ws = [np.asarray(w, dtype=np.float64) for w in weights]
    out_data = np.zeros_like(xs[0].data)
    for v, w in zip(xs, ws):
        out_data += v.data * (w[:, None] if w.ndim == 1 else w)

    def backward(g):
        for v, w in zip(xs, ws):
            v.accum_grad(g * (w[:, None] if w.ndim == 1 else w))

    return Value(out_data, tuple(xs), backward)


def scale(x: Value, c: float) -> Value:
    c = float(c)

    def backward(g):
        x.accum_grad(g * c)

    return Value(x.data * c, (x,), backward)


def add_noise(x: Value, noise: np.ndarray) -> Value:
    """x + constant noise (the noise is treated as data in backward)."""
    _check(x.data.shape == np.shape(noise), f"add_noise: {x.shape} vs {np.shape(noise)}")

    def backward(g):
        x.accum_grad(g)

    return Value(x.data + noise, (x,), backward)


def concat(xs: Sequence[Value]) -> Value:
    """Concatenate along the last axis."""
    out_data = np.concatenate([v.data for v in xs], axis=-1)
    sizes = [v.data.shape[-1] for v in xs]

    def backward(g):
        off = 0
        for v, n in zip(xs, sizes):
            v.accum_grad(g[..., off:off + n])
            off += n

    return Value(out_data, tuple(xs), backward)


def absval(x: Value) -> Value:
    sign = np.sign(x.data)

    def backward(g):
        x.accum_grad(g * sign)

    return Value(np.abs(x.data), (x,), backward)


def reshape(x: Value, shape: tuple[int, ...]) -> Value:
    orig = x.data.shape

    def backward(g):
        x.accum_grad(g.reshape(orig))

    return Value(x.data.reshape(shape), (x,), backward)


def batch_vec_mat(v: Value, m: Value) -> Value:
    """Per-sample vector-matrix product: (B,N) x (B,N,E) -> (B,E)."""
    _check(v.data.ndim == 2 and m.data.ndim == 3, "batch_vec_mat ranks")
    _check(v.data.shape[0] == m.data.shape[0] and v.data.shape[1] == m.data.shape[1],
           f"batch_vec_mat: {v.shape} vs {m.shape}")
    out_data = np.einsum("bn,bne->be", v.data, m.data)

    def backward(g):
        v.accum_grad(np.einsum("be,bne->bn", g, m.data))
        m.accum_grad(np.einsum("bn,be->bne", v.data, g))

    return Value(out_data, (v, m), backward)


def pick(x: Value, index) -> Value:
    """Select one entry per row: (B,U), (B,) -> (B,)."""
    idx = np.asarray(index)
    _check(x.data.ndim == 2 and idx.shape == (x.data.shape[0],), f"pick: {x.shape}, {idx.shape}")
    rows = np.arange(x.data.shape[0])
    out_data = x.data[rows, idx]

    def backward(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        np.add.at(x.grad, (rows, idx), g)

    return Value(out_data, (x,), backward)


def sq_err_sum(pred: Value, target, weight=1.0) -> Value:
    """Weighted sum of squared errors against a constant target; scalar output."""
    t = np.asarray(target, dtype=np.float64)
    w = np.asarray(weight, dtype=np.float64)
    _check(t.shape == pred.data.shape, f"sq_err_sum target: {t.shape} vs {pred.shape}")
    diff = pred.data - t
    out_data = np.sum(w * diff * diff)

    def backward(g):
        pred.accum_grad(2.0 * w * diff * g)

    return Value(out_data, (pred,), backward)


def mse(pred: Value, target) -> Value:
    """Mean squared error against a constant target; scalar output."""
    t = np.asarray(target, dtype=np.float64)
    _check(t.shape == pred.data.shape, f"mse target: {t.shape} vs {pred.shape}")
    n = pred.data.size
    diff = pred.data - t
    out_data = np.sum(diff * diff) / n

    def backward(g):
        pred.accum_grad((2.0 / n) * diff * g)

    return Value(out_data, (pred,), backward)


def sum_reduce(x: Value) -> Value:
    """Sum of all elements; scalar output."""

    def backward(g):
        x.accum_grad(np.full_like(x.data, g))

    return Value(np.sum(x.data), (x,), backward)


def add_scalars(xs: Sequence[Value]) -> Value:
    """Sum of scalar values (loss terms)."""
    out_data = np.float64(0.0)
    for v in xs:
        out_data = out_data + v.data

    def backward(g):
        for v in xs:
            v.accum_grad(g)

    return Value(out_data, tuple(xs), backward)


def gru_cell(x: Value, h: Value, w_i: Value, w_h: Value, b_i: Value, b_h: Value) -> Value:
    """One gated-recurrent step, fused forward and backward.

    Gate layout along the last axis of the (n_in, 3H) / (H, 3H) weights is
    [reset | update | candidate]:

        r  = sigmoid(x Wi_r + bi_r + h Wh_r + bh_r)
        z  = sigmoid(x Wi_z + bi_z + h Wh_z + bh_z)
        n  = tanh(x Wi_n + bi_n + r * (h Wh_n + bh_n))
        h' = (1 - z) * n + z * h
    """
    hdim = h.data.shape[-1]
    _check(w_i.data.shape[1] == 3 * hdim and w_h.data.shape == (hdim, 3 * hdim),
           f"gru_cell weights: {w_i.shape}, {w_h.shape} for hidden {hdim}")
    _check(x.data.shape[-1] == w_i.data.shape[0], f"gru_cell input: {x.shape} vs {w_i.shape}")
    _check(x.data.ndim == h.data.ndim, "gru_cell: x and h rank mismatch")

    gi = x.data @ w_i.data + b_i.data
    gh = h.data @ w_h.data + b_h.data
    i_r, i_z, i_n = gi[..., :hdim], gi[..., hdim:2 * hdim], gi[..., 2 * hdim:]
    h_r, h_z, h_n = gh[..., :hdim], gh[..., hdim:2 * hdim], gh[..., 2 * hdim:]
    r = _sigmoid(i_r + h_r)
    z = _sigmoid(i_z + h_z)
    n = np.tanh(i_n + r * h_n)
    out_data = (1.0 - z) * n + z * h.data

    def backward(g):
        dz = g * (h.data - n)
        dn = g * (1.0 - z)
        da_n = dn * (1.0 - n * n)
        dr = da_n * h_n
        dhn = da_n * r
        da_z = dz * z * (1.0 - z)
        da_r = dr * r * (1.0 - r)
        dgi = np.concatenate([da_r, da_z, da_n], axis=-1)
        dgh = np.concatenate([da_r, da_z, dhn], axis=-1)
        x.accum_grad(dgi @ w_i.data.T)
        h.accum_grad(g * z + dgh @ w_h.data.T)
        if x.data.ndim == 1:
            w_i.accum_grad(np.outer(x.data, dgi))
            w_h.accum_grad(np.outer(h.data, dgh))
            b_i.accum_grad(dgi)
            b_h.accum_grad(dgh)
        else:
            w_i.accum_grad(x.data.T @ dgi)
            w_h.accum_grad(h.data.T @ dgh)
            b_i.accum_grad(dgi.sum(axis=0))
            b_h.accum_grad(dgh.sum(axis=0))

    return Value(out_data, (x, h, w_i, w_h, b_i, b_h), backward)


# ---------------------------------------------------------------------------
# reverse sweep
# ---------------------------------------------------------------------------

def backward(root: Value) -> None:
    """Reverse sweep from a scalar root; visits each node exactly once."""
    if root.data.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
    topo: list[Value] = []
    seen: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def finite_diff_check(f: Callable[[], Value], params: Iterable[Value],
                      h: float = 1e-5, max_coords: int | None = None,
                      rng: np.random.Generator | None = None) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` must be a deterministic scalar computation over ``params``.  With
    ``max_coords`` set, at most that many coordinates per parameter are
    probed (uniformly, via ``rng``); otherwise every coordinate is checked.
    The per-coordinate error is ``|fd - ad| / max(1, |fd|, |ad|)``: relative
    above magnitude one, absolute below, so finite-difference roundoff on
    near-zero coordinates cannot drown a real defect elsewhere.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    out = f()
    backward(out)
    ad_grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    worst = 0.0
    for p, ad in zip(params, ad_grads):
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        for k in coords:
            orig = flat[k]
            flat[k] = orig + h
            f_plus = float(f().data)
            flat[k] = orig - h
            f_minus = float(f().data)
            flat[k] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            ad_k = float(ad.reshape(-1)[k])
            scale_ = max(abs(fd), abs(ad_k))
            if scale_ < 1e-12:
                continue
            err = abs(fd - ad_k) / max(scale_, 1.0)
            worst = max(worst, err)
    return worst
