"""
A minimal reverse-mode autodiff engine
======================================

Everything the retrieval models learn is trained through a small tape-based
autodiff engine: tensors wrap numpy arrays, operations record themselves on
a tape, and one reverse walk accumulates gradients into the parameters.
"""

import numpy as np

from slotsearch import grad as G
from slotsearch.grad import ParamStore, Tape, Tensor, grad_check

# Tensors wrap float64 numpy data. Only tensors marked requires_grad
# receive gradients; everything else is treated as a constant.
x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
c = Tensor(np.array([0.5, 0.5, 0.5]))

# Recording happens inside a Tape context. Outside one, ops just compute.
with Tape() as tape:
    y = G.tsum(G.tanh(x * c) * x)
    tape.backward(y)

print("value:", y.data)
print("gradient of x:", x.grad)

# The engine covers what recurrent attention models need: matmul, the
# usual nonlinearities, softmax with a sharpness multiplier, row
# normalization, gathers, and shape plumbing.
with Tape() as tape:
    logits = Tensor(np.array([[2.0, 0.5, -1.0]]), requires_grad=True)
    att = G.softmax_sharp(logits, 9.0, axis=1)
    picked = G.take_flat(att, np.array([0]))
    tape.backward(G.tsum(picked))
print("sharp attention:", np.round(att.data, 5))
print("gradient through the gather:", np.round(logits.grad, 5))

# Parameters live in a ParamStore: named tensors with deterministic
# initialization from an explicit RNG.
rng = np.random.default_rng(0)
store = ParamStore()
w1 = store.matrix("w1", 4, 3, rng)
b1 = store.vector("b1", 4)
w2 = store.matrix("w2", 1, 4, rng)


def tiny_mlp():
    h = G.relu(G.linear(Tensor(np.array([[0.3, -0.2, 0.9]])), w1) + b1)
    return G.tsum(G.linear(h, w2))


# grad_check compares every analytic gradient against central finite
# differences; anything above 1e-4 relative error is a bug.
err = grad_check(tiny_mlp, store.tensors())
print(f"finite-difference check, max relative error: {err:.2e}")
assert err < 1e-4
