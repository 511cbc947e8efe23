# coding: utf-8

# # A tour of the tape

# Every operation executed inside a `Tape` is recorded; `backward` walks the
# record in reverse and leaves gradients on the leaf tensors.

import numpy as np

from ncg import autodiff as ad
from ncg import gradcheck
from ncg.autodiff import Tape, Tensor

# A valid convolution shrinks the time axis by `width - 1`.

x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 4))
k = Tensor(np.ones((1, 1, 2)), requires_grad=True)
b = Tensor(np.zeros(1), requires_grad=True)

with Tape() as tape:
    y = ad.conv1d(x, k, b)
    loss = ad.softmax(ad.leaky_relu(y, 0.05), axis=2).sum()
print("conv output:", y.data.ravel())
print("ops recorded:", tape.op_names())

# Softmax rows always sum to one, so the gradient of their sum is zero.

tape.backward(loss)
print("d loss / d kernel:", k.grad.ravel())

# The same machinery is checked against central differences for every op.

print(gradcheck.report(gradcheck.run(instances=5)))
