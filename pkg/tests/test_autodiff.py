"""Gradient correctness of every tape operation against central differences."""

import numpy as np
import pytest

from cyberdial import autodiff as ad
from cyberdial.autodiff import Value, backward, finite_diff_check, no_grad
from cyberdial.nn import GRULayer, ParamStore

TOL = 1e-4


def make_param(rng, shape):
    return Value(rng.standard_normal(shape))


def test_relu_definition():
    v = Value(np.array([-3.0, 2.0, 0.0]))
    out = ad.relu(v)
    assert np.array_equal(out.data, [0.0, 2.0, 0.0])


def test_logistic_definition():
    v = Value(np.array([0.0]))
    assert ad.logistic(v).data[0] == 0.5


def test_lookup_identity_rows():
    table = Value(np.eye(2))
    out = ad.lookup(table, 1)
    assert np.array_equal(out.data, [0.0, 1.0])


def test_lookup_row_gradient():
    table = Value(np.arange(6.0).reshape(3, 2))
    out = ad.sum_reduce(ad.lookup(table, 0))
    backward(out)
    expected = np.zeros((3, 2))
    expected[0] = 1.0
    assert np.array_equal(table.grad, expected)


def test_lookup_out_of_range():
    table = Value(np.eye(2))
    with pytest.raises(IndexError):
        ad.lookup(table, 2)


def test_linear_function_noise_floor():
    rng = np.random.default_rng(0)
    w = make_param(rng, (4,))
    x = rng.standard_normal(4)

    def f():
        return ad.sum_reduce(ad.sum_elementwise(w, Value(x)))

    assert finite_diff_check(f, [w]) < 1e-9


def test_composite_affine_relu_affine():
    rng = np.random.default_rng(1)
    w1, b1 = make_param(rng, (5, 7)), make_param(rng, (7,))
    w2, b2 = make_param(rng, (7, 3)), make_param(rng, (3,))
    x = rng.standard_normal((2, 5))

    def f():
        h = ad.relu(ad.affine(Value(x), w1, b1))
        return ad.sum_reduce(ad.affine(h, w2, b2))

    assert finite_diff_check(f, [w1, b1, w2, b2]) < TOL


def test_gru_zero_params_closed_form():
    # all gates sit at logistic(0)=0.5 and the candidate at tanh(0)=0,
    # so the update reduces to h' = h/2
    store = ParamStore()
    rng = np.random.default_rng(0)
    gru = GRULayer(store, "g", 4, 3, rng)
    for name in store.names():
        store[name].data[:] = 0.0
    h = np.array([[1.0, -2.0, 0.5]])
    out = gru(Value(np.ones((1, 4))), Value(h))
    assert np.allclose(out.data, h / 2.0, atol=0, rtol=0)


def test_gru_hprev_gradient():
    rng = np.random.default_rng(2)
    store = ParamStore()
    gru = GRULayer(store, "g", 3, 4, rng)
    x = rng.standard_normal((2, 3))
    h = make_param(rng, (2, 4))

    def f():
        return ad.sum_reduce(gru(Value(x), h))

    assert finite_diff_check(f, [h]) < TOL


def test_gru_param_gradients():
    rng = np.random.default_rng(3)
    store = ParamStore()
    gru = GRULayer(store, "g", 3, 4, rng)
    x = rng.standard_normal((2, 3))
    h = rng.standard_normal((2, 4))

    def f():
        return ad.sum_reduce(gru(Value(x), Value(h)))

    params = [store[n] for n in store.names()]
    assert finite_diff_check(f, params) < TOL


def test_bptt_30_cells_shape_conservation():
    rng = np.random.default_rng(4)
    store = ParamStore()
    gru = GRULayer(store, "g", 4, 4, rng)
    h = Value(np.zeros((2, 4)))
    for _ in range(30):
        h = gru(Value(rng.standard_normal((2, 4))), h)
        assert h.shape == (2, 4)
    backward(ad.sum_reduce(h))
    assert store["g.w_i"].grad.shape == (4, 12)


def test_gradient_accumulation_doubles():
    rng = np.random.default_rng(5)
    w = make_param(rng, (3, 3))
    x = rng.standard_normal((2, 3))
    b = make_param(rng, (3,))

    def loss():
        return ad.sum_reduce(ad.affine(Value(x), w, b))

    single = loss()
    backward(single)
    g1 = w.grad.copy()
    w.zero_grad(), b.zero_grad()
    doubled = ad.add_scalars([loss(), loss()])
    backward(doubled)
    assert np.array_equal(w.grad, 2.0 * g1)


def test_no_grad_builds_no_graph():
    w = Value(np.ones((2, 2)))
    with no_grad():
        out = ad.relu(ad.affine(Value(np.ones((1, 2))), w, Value(np.zeros(2))))
    assert out._parents == () and out._backward is None


def test_shape_mismatch_raises():
    with pytest.raises(ad.ShapeMismatch):
        ad.affine(Value(np.ones((2, 3))), Value(np.ones((4, 2))), Value(np.zeros(2)))
    with pytest.raises(ad.ShapeMismatch):
        ad.sum_elementwise(Value(np.ones(3)), Value(np.ones(4)))


@pytest.mark.parametrize("seed", range(20))
def test_property_every_op_gradient(seed):
    """Randomized shapes/seeds across the whole op set (acceptance support)."""
    rng = np.random.default_rng(seed)
    B = int(rng.integers(1, 4))
    n_in = int(rng.integers(2, 6))
    n_out = int(rng.integers(2, 6))
    hid = int(rng.integers(2, 5))

    table = make_param(rng, (6, n_out))
    idx = rng.integers(6, size=B)
    w, b = make_param(rng, (n_in, n_out)), make_param(rng, (n_out,))
    x = rng.standard_normal((B, n_in))
    store = ParamStore()
    gru = GRULayer(store, "g", n_out, hid, rng)
    wm = make_param(rng, (B, n_out, hid))
    pick_idx = rng.integers(n_out, size=B)
    target = rng.standard_normal(B)
    weights = [rng.standard_normal(B) for _ in range(2)]
    noise = rng.standard_normal((B, n_out))
    h0 = rng.standard_normal((B, hid))

    def f():
        aff = ad.affine(Value(x), w, b)
        looked = ad.lookup(table, idx)
        mixed = ad.weighted_sum([aff, looked], weights)
        noisy = ad.add_noise(mixed, noise)
        sig = ad.logistic(noisy)
        rl = ad.relu(ad.sum_elementwise(aff, looked, sig))
        h = gru(rl, Value(h0))
        bvm = ad.batch_vec_mat(ad.absval(rl), wm)
        cat = ad.concat([h, bvm])
        picked = ad.pick(ad.scale(rl, 1.7), pick_idx)
        parts = [
            ad.sq_err_sum(picked, target, 0.5),
            ad.mse(ad.reshape(cat, (B * (hid + hid),)),
                   np.zeros(B * (hid + hid))),
            ad.sum_reduce(cat),
        ]
        return ad.add_scalars(parts)

    params = [table, w, b, wm] + [store[n] for n in store.names()]
    assert finite_diff_check(f, params) < TOL
