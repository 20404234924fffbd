"""The hand-rolled autodiff engine: ops, gradients, finite-difference check.

Run: python demos/03_autograd.py
"""

import numpy as np

from refinpaint import autograd as ag
from refinpaint.autograd import Tensor

rng = np.random.default_rng(0)

# A miniature attention head, end to end.
x = Tensor(rng.normal(size=(1, 6, 8)), requires_grad=True)
wq = Tensor(rng.normal(size=(8, 8)) * 0.3, requires_grad=True)
wk = Tensor(rng.normal(size=(8, 8)) * 0.3, requires_grad=True)
wv = Tensor(rng.normal(size=(8, 8)) * 0.3, requires_grad=True)

q, k, v = ag.matmul(x, wq), ag.matmul(x, wk), ag.matmul(x, wv)
causal = np.tril(np.ones((6, 6), dtype=bool))
weights = ag.masked_softmax(ag.scale(ag.matmul(q, ag.transpose(k)), 8 ** -0.5), causal)
out = ag.matmul(weights, v)
loss = ag.tsum(ag.mul(out, out))
loss.backward()
print(f"attention toy loss = {loss.item():.4f}")
print("future attention weights are exactly zero:",
      bool((weights.data[0][~causal] == 0).all()))

# Central finite differences agree with the recorded gradient.
idx = (0, 3, 2)
h = 1e-6
def f():
    q2, k2, v2 = ag.matmul(x, wq), ag.matmul(x, wk), ag.matmul(x, wv)
    w2 = ag.masked_softmax(ag.scale(ag.matmul(q2, ag.transpose(k2)), 8 ** -0.5), causal)
    o2 = ag.matmul(w2, v2)
    return float((o2.data * o2.data).sum())

orig = x.data[idx]
x.data[idx] = orig + h
up = f()
x.data[idx] = orig - h
down = f()
x.data[idx] = orig
fd = (up - down) / (2 * h)
print(f"autograd {x.grad[idx]:+.6f} vs finite difference {fd:+.6f}")

# Losses average over selected positions only.
logits = Tensor(np.zeros((4, 189)))
mask = np.array([True, True, False, False])
ce = ag.cross_entropy(logits, np.array([5, 6, 7, 8]), mask)
print(f"uniform cross-entropy over 2 selected positions = {ce.item():.4f} "
      f"(ln 189 = {np.log(189):.4f})")
