"""
Reverse-mode gradients on numpy arrays
======================================

The package trains everything with its own small autodiff engine. This demo
builds a few expressions, runs backward, and checks them against central
finite differences.
"""

# ## Imports

import numpy as np

from czsl_stagewise import autodiff as ad
from czsl_stagewise.autodiff import Tensor, grad_check

rng = np.random.default_rng(0)

# ## A tiny expression

x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
W = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
loss = ad.sum(ad.relu(ad.matmul(x, W)))
loss.backward()
print("loss", loss.item())
print("dL/dW\n", W.grad)

# The record is released after backward, so a second call is refused.
try:
    loss.backward()
except RuntimeError as exc:
    print("second backward:", exc)

# ## Gradients accumulate until zeroed

W.zero_grad()
for _ in range(2):
    ad.sum(ad.matmul(x, W)).backward()
print("accumulated column sums of x, twice:", W.grad[:, 0])

# ## Checking against finite differences

g, b = Tensor(np.ones(4), requires_grad=True), Tensor(np.zeros(4), requires_grad=True)
labels = np.array([0, 3, 1])


def f():
    h = ad.layer_norm(x, g, b)
    return ad.cross_entropy_from_probs(ad.softmax(h), labels)


report = grad_check(f, {"x": x, "gain": g, "offset": b})
print(report.summary())

# ## The whole training loss
#
# The same check applied to the complete three-branch loss on a
# 2-state x 2-object instance (this is what `czsl-stagewise gradcheck` runs).

from czsl_stagewise.workbench.diagnostics import run_gradcheck

print(run_gradcheck(seed=0, max_coords=6).summary())
