"""
Reverse-mode gradients and finite-difference checks
====================================================

Every op records its parents and the name of a backward rule. Calling
``backward`` on a scalar walks that record newest-first and fills ``.grad``.
"""

import numpy as np

from mgattn import tensor as T
from mgattn.gradcheck import grad_check, run_suite
from mgattn.tensor import Tensor

# d(x*x)/dx at 3 is 6
x = Tensor(3.0, requires_grad=True)
T.mul(x, x).backward()
print("d(x^2)/dx at 3:", x.grad)

# a tensor used twice gets the sum of both contributions
x = Tensor(0.0, requires_grad=True)
T.add(T.sigmoid(x), T.scalar_mul(x, 2.0)).backward()
print("d(sigmoid(x) + 2x)/dx at 0:", x.grad)  # 0.25 + 2

# a small convolution, checked against central differences
rng = np.random.default_rng(0)
img = Tensor(rng.normal(size=(3, 8, 8)), requires_grad=True)
w = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)
b = Tensor(np.zeros(4), requires_grad=True)
err = grad_check(lambda img, w, b: T.sum_all(T.relu(T.conv2d(img, w, b, padding=1))), [img, w, b])
print(f"conv2d + relu max relative error: {err:.2e}")

# the full suite covers every op plus the joint loss of a small model
for name, err in run_suite().items():
    print(f"  {name:<24s} {err:.2e}")
