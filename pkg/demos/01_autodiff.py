"""
Reverse-mode autodiff on numpy arrays
=====================================

Build a small graph, backpropagate, then check the gradients against
central finite differences and take a few Adam steps.
"""

import numpy as np

from soprank import numgrad as ng
from soprank.numgrad import Tensor

rng = np.random.default_rng(0)

# leaves that should receive gradients are marked requires_grad
w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
x = Tensor(rng.normal(size=(5, 3)))

h = ng.relu(ng.matmul(x, w))
loss = ng.softplus(h).mean()
loss.backward()
print("loss", loss.item())
print("dloss/dw\n", w.grad)

# a graph is consumed by backward; calling it twice is an error
try:
    loss.backward()
except ng.GradientError as exc:
    print("second backward:", exc)

# finite-difference check; coordinates straddling a ReLU kink are skipped
def f():
    return ng.softplus(ng.relu(ng.matmul(x, w))).mean()

res = ng.check_gradients(f, {"w": w})
print(f"max relative error {res.max_rel_error:.1e} over {res.n_checked} coordinates")

# Adam drives a quadratic to its minimum
target = np.array([1.0, -2.0])
p = Tensor(np.zeros(2), requires_grad=True)
opt = ng.Adam([p], ng.AdamHyper(lr=0.1))
for _ in range(200):
    opt.zero_grad()
    d = p - target
    (d * d).sum().backward()
    opt.step()
print("adam solution", p.data)
