# coding: utf-8

# # A small MLP in plain numpy
#
# Every client in the simulator trains the same kind of model: a stack of
# linear layers with an activation (and optionally a batch-norm layer) in
# between. Parameters live in a `ParameterSet`, an ordered dict of arrays.

# In[1]:

import numpy as np

from fedcac.nn import MlpSpec, init_model, loss, loss_and_grad, predict, sgd_step, update_norm_stats
from fedcac.data import generate_blobs

spec = MlpSpec((2, 16, 3), use_norm_layer=True)
model = init_model(spec, np.random.default_rng(0))
for name, shape in zip(model.names, model.shapes):
    print(f"{name:22s} {shape}")
print("total parameters:", model.total_count)


# Running mean/var of the norm layer are *statistics*, not trained weights;
# the gradient is only defined for the rest.

# In[2]:

print("stat layers:", sorted(model.stats))
print("trained layers:", model.gradient_names)


# ## Checking the backward pass
#
# A central finite difference on one weight should agree with the analytic
# gradient to many digits.

# In[3]:

data = generate_blobs(3, 2, 30, 4.0, seed=1)
x, y = data.features, data.labels
_, grad, _ = loss_and_grad(model, spec, x, y)

h = 1e-5
w = model["fc0.weight"]
plus, minus = w.copy(), w.copy()
plus[0, 0] += h
minus[0, 0] -= h
fd = (loss(model.with_layers({**model.layers, "fc0.weight": plus}), spec, x, y)
      - loss(model.with_layers({**model.layers, "fc0.weight": minus}), spec, x, y)) / (2 * h)
print(f"analytic {grad['fc0.weight'][0, 0]:.10f}  finite difference {fd:.10f}")


# ## Plain SGD
#
# A few hundred full-batch steps separate three well-spaced blobs. The
# norm layer's running statistics are blended in after each step; `predict`
# runs in eval mode and uses them.

# In[4]:

for step in range(200):
    _, g, cache = loss_and_grad(model, spec, x, y)
    model = update_norm_stats(sgd_step(model, g, 0.1), spec, cache)
print("training accuracy:", np.mean(predict(model, spec, x) == y))
