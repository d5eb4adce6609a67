"""
Reverse-mode autodiff on numpy arrays
=====================================

The network is trained with a small reverse-mode autodiff engine. Every
operation records how to push gradients back to its inputs; ``backward``
walks the graph in reverse topological order.
"""

import numpy as np

from uvmitosis.tensor import AdamConfig, HuberConfig, Parameter, Tensor, adam_step, conv2d, huber_loss, relu

rng = np.random.default_rng(0)

# A 3x3 convolution followed by ReLU and a Huber loss against a target.
x = Tensor(rng.standard_normal((1, 2, 6, 6)))
w = Parameter(rng.standard_normal((4, 2, 3, 3)) * 0.3, name="w")
b = Parameter(np.zeros(4), name="b")
target = rng.random((1, 4, 6, 6))

loss = huber_loss(relu(conv2d(x, w, b, padding=1)), target, HuberConfig(delta=1.0))
loss.backward()
print("loss:", loss.item())
print("dL/dw shape:", w.grad.shape)

# Check one weight entry against a central finite difference.
step = 1e-5
w.data[0, 0, 1, 1] += step
up = huber_loss(relu(conv2d(x, Tensor(w.data), Tensor(b.data), padding=1)), target).item()
w.data[0, 0, 1, 1] -= 2 * step
down = huber_loss(relu(conv2d(x, Tensor(w.data), Tensor(b.data), padding=1)), target).item()
w.data[0, 0, 1, 1] += step
print("analytic:", w.grad[0, 0, 1, 1], "numeric:", (up - down) / (2 * step))

# A few Adam steps drive the loss down.
config = AdamConfig(learning_rate=1e-2)
for i in range(50):
    loss = huber_loss(relu(conv2d(x, w, b, padding=1)), target)
    loss.backward()
    adam_step([w, b], config)
    if i % 10 == 0:
        print(f"step {i:2d} loss {loss.item():.5f}")
