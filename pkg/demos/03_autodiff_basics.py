"""The reverse-mode tape that powers both learners, in miniature.

Builds a two-layer computation by hand, backpropagates, and cross-checks
every gradient against central finite differences; then shows the fused GRU
cell's closed-form behaviour at zero parameters.
"""

import numpy as np

from cyberdial import autodiff as ad
from cyberdial.autodiff import Value, backward, finite_diff_check
from cyberdial.nn import GRULayer, ParamStore


def main():
    rng = np.random.default_rng(0)

    print("== affine -> relu -> affine, gradients vs central differences")
    w1, b1 = Value(rng.standard_normal((4, 6))), Value(rng.standard_normal(6))
    w2, b2 = Value(rng.standard_normal((6, 2))), Value(rng.standard_normal(2))
    x = rng.standard_normal((3, 4))

    def f():
        hidden = ad.relu(ad.affine(Value(x), w1, b1))
        return ad.sum_reduce(ad.affine(hidden, w2, b2))

    err = finite_diff_check(f, [w1, b1, w2, b2])
    print(f"  max error over every coordinate: {err:.2e}  (tolerance 1e-4)")

    print("\n== gradients accumulate until cleared: backprop f+f doubles them")
    out = f()
    backward(out)
    g1 = w1.grad.copy()
    w1.zero_grad(), b1.zero_grad(), w2.zero_grad(), b2.zero_grad()
    backward(ad.add_scalars([f(), f()]))
    print(f"  grad(f+f) == 2 grad(f): {np.array_equal(w1.grad, 2 * g1)}")

    print("\n== fused GRU cell: zero parameters halve the hidden state")
    store = ParamStore()
    gru = GRULayer(store, "gru", 4, 3, rng)
    for name in store.names():
        store[name].data[:] = 0.0
    h = np.array([[1.0, -2.0, 0.5]])
    out = gru(Value(rng.standard_normal((1, 4))), Value(h))
    print(f"  h  = {h[0]}")
    print(f"  h' = {out.data[0]}   (all gates sit at logistic(0) = 0.5)")

    print("\n== thirty chained cells backpropagate in one sweep")
    gru = GRULayer(store := ParamStore(), "g", 3, 3, rng)
    h = Value(np.zeros((1, 3)))
    for _ in range(30):
        h = gru(Value(rng.standard_normal((1, 3))), h)
    backward(ad.sum_reduce(h))
    print(f"  ||dLoss/dW_h|| = {np.linalg.norm(store['g.w_h'].grad):.4f}")


if __name__ == "__main__":
    main()
