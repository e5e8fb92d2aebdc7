"""
Reverse-mode autodiff in a few minutes
======================================

The optimizer in this package runs on a small define-by-run tensor engine.
This script builds a graph, checks a gradient against finite differences,
and minimizes the Rosenbrock function with the bundled Adam.
"""

import numpy as np

from artifit import autodiff as ad
from artifit.autodiff import Adam, Tensor

# A Tensor wraps a float64 array. requires_grad marks it as a leaf whose
# gradient we want after backward().
x = Tensor(np.array([0.5, -1.2, 2.0]), requires_grad=True)
w = Tensor(np.array([[1.0, 0.0, 2.0], [0.3, -0.5, 0.7]]), requires_grad=True)

# Compose ops as usual; every intermediate remembers how it was made.
y = ad.sigmoid(w @ x)
loss = (y * y).sum()
loss.backward()
print("loss          ", loss.data)
print("dloss/dx      ", x.grad)

# Spot-check one entry of the gradient with a central difference.
from scipy.special import expit

h = 1e-6
xp = x.data.copy(); xp[0] += h
xm = x.data.copy(); xm[0] -= h
f = lambda v: float((expit(w.data @ v) ** 2).sum())
fd = (f(xp) - f(xm)) / (2 * h)
print("finite diff    %.10f" % fd)
print("analytic       %.10f" % x.grad[0])

# Adam on the 2-D Rosenbrock function. The minimum is at (1, 1).
p = Tensor(np.array([-1.0, 1.5]), requires_grad=True)
opt = Adam([p], lr=0.02)
for step in range(2000):
    opt.zero_grad()
    a = p[1] - p[0] * p[0]
    b = 1.0 - p[0]
    rosen = 100.0 * (a * a) + b * b
    rosen.backward()
    opt.step()
    if step % 400 == 0:
        print("step %4d  f=%.6f  p=%s" % (step, rosen.data, np.round(p.data, 4)))
print("converged to   ", np.round(p.data, 6))
