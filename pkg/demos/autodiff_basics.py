"""
Reverse-mode autodiff on numpy
==============================

Every policy, value and planning gradient in the package goes through a
small tape-free graph of Tensors. Here: a two-layer network and a check of
its gradient against central differences.
"""

import numpy as np

from activeloc import autodiff as ad

rng = np.random.default_rng(0)
X = rng.normal(size=(5, 3))
W1, b1 = rng.normal(size=(3, 4)), np.zeros(4)
W2 = rng.normal(size=(4, 1))


def loss(W1, b1, W2):
    h = ad.tanh(ad.affine(X, W1, b1))
    return ad.reduce_mean(ad.mul(ad.matmul(h, W2), ad.matmul(h, W2)))


leaves = [ad.Tensor(a, requires_grad=True) for a in (W1, b1, W2)]
out = loss(*leaves)
ad.backward(out)
print("loss", out.item())
print("dL/dW2", leaves[2].grad.ravel().round(4))

print("max relative error vs finite differences:", ad.gradcheck(loss, [W1, b1, W2]))

# graphs are freed after backward; a second call is an error
try:
    ad.backward(out)
except RuntimeError as e:
    print("second backward:", e)
