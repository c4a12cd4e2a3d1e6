"""
The embedding network and its hand-written gradients
=====================================================

Two embedding tables feed a small ReLU MLP with a sigmoid output. The
backward pass is written by hand, so this script checks it against
central differences and then takes a few Adam steps.
"""

# %%
import numpy as np

from fedrec.model import (
    Batch,
    ModelDims,
    ModelParams,
    OptimizerState,
    backward,
    bce_loss,
    forward,
    init_params,
    optimizer_step,
)

dims = ModelDims(num_users=2, num_skills=2)
for name, shape in dims.shapes().items():
    print(f"{name:>9} {shape}")
print("parameters:", dims.num_params)

# %%
rng = np.random.default_rng(0)
params = init_params(dims, seed=0)
anchor = ModelParams(dims, params.flat + rng.normal(0, 0.05, dims.num_params))
batch = Batch([0, 1, 1, 0], [1, 1, 0, 0], rng.random((4, 3)), [1, 0, 1, 1])
print("probabilities:", forward(params, batch).round(4))

# %%
# Central differences over every coordinate, with and without the proximal pull.
def numeric_grad(p, mu, h=1e-5):
    def loss(flat):
        q = ModelParams(dims, flat)
        d = flat - anchor.flat
        return bce_loss(forward(q, batch), batch.labels) + 0.5 * mu * d @ d

    out = np.empty(dims.num_params)
    for i in range(dims.num_params):
        e = np.zeros(dims.num_params)
        e[i] = h
        out[i] = (loss(p.flat + e) - loss(p.flat - e)) / (2 * h)
    return out

for mu in (0.0, 2.0):
    _, g = backward(params, batch, mu, anchor)
    num = numeric_grad(params, mu)
    print(f"mu={mu}: max |analytic - numeric| = {np.abs(g.flat - num).max():.2e}")

# %%
state = OptimizerState("adam", learning_rate=0.01)
p = params
for step in range(1, 51):
    loss, g = backward(p, batch)
    p, state = optimizer_step(p, g, state)
    if step in (1, 10, 50):
        print(f"step {step:>2}: loss {loss:.4f}")
