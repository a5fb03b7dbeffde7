"""
Gradients on a tape, checked against finite differences
=======================================================

Build a tiny expression, backpropagate through it, then run the
finite-difference suite over every op.
"""

import numpy as np

from dfkd import autodiff as ad
from dfkd.autodiff import Tensor
from dfkd.gradcheck import format_report, run_gradcheck

x = Tensor([[1.0, -2.0, 3.0]], requires_grad=True)
w = Tensor(np.ones((3, 2)), requires_grad=True)

# loss = mean(relu(x @ w)); only the positive column sum survives the relu
loss = ad.mean(ad.relu(ad.matmul(x, w)))
ad.backward(loss)
print("loss", loss.item())
print("dloss/dx", x.grad)
print("dloss/dw", w.grad)

# a few seeds are enough for a quick look; the acceptance suite uses 100
print(format_report(run_gradcheck(seeds=5)))
