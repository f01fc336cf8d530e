"""A quick tour of the tensor engine: graphs, backward, and verification.

Everything the denoiser trains with reduces to the handful of primitives
shown here.  The last section double-checks an analytic gradient against
central differences, which is the same trick the test suite and the
``dsct gradcheck`` command lean on.
"""

import numpy as np

from dsct import functional as F
from dsct.gradcheck import grad_check
from dsct.tensor import Tensor, tensor_sum


def main():
    # forward arithmetic builds a graph; backward walks it once
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    y = Tensor(np.array([4.0, 5.0, 6.0]), requires_grad=True)
    loss = tensor_sum(x * y + x)
    loss.backward()
    print("d(sum(x*y + x))/dx =", x.grad, " expected", y.data + 1)
    print("d(sum(x*y + x))/dy =", y.grad, " expected", x.data)

    # a value used twice accumulates gradient from both paths
    z = Tensor(np.array([2.0]), requires_grad=True)
    (z * z).backward()
    print("d(z^2)/dz at z=2:", z.grad, " expected [4.]")

    # the same machinery drives real layers
    img = Tensor(np.random.default_rng(0).standard_normal((1, 3, 8, 8)),
                 requires_grad=True)
    w = Tensor(np.random.default_rng(1).standard_normal((4, 3, 3, 3)) * 0.1,
               requires_grad=True)
    out = F.conv2d(img, w, padding=1)
    tensor_sum(out * out).backward()
    print("conv weight grad shape:", w.grad.shape)

    # never trust a hand-derived backward: compare against finite differences
    # (the weighting must stay fixed across evaluations, so draw it once)
    rng = np.random.default_rng(2)
    coeff = Tensor(rng.standard_normal((3, 5)))
    errs = grad_check(
        lambda t: tensor_sum(F.softmax(t["x"]) * coeff),
        {"x": rng.standard_normal((3, 5))},
    )
    print("softmax finite-difference relative error:", f"{max(errs.values()):.2e}")


if __name__ == "__main__":
    main()
