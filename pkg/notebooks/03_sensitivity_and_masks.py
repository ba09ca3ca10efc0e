# coding: utf-8

# # Which parameters are critical?
#
# After local training each client scores every parameter by
# |(theta_end - theta_start) * theta_end|, a first-order estimate of how much
# the loss would move if that parameter were zeroed. The top tau fraction in
# each layer is marked critical.

# In[1]:

import numpy as np

from fedcac.client import ClientState, local_train
from fedcac.data import ClientShard, generate_blobs
from fedcac.mask import header_size, overlap_ratio, serialize_mask
from fedcac.nn import MlpSpec, exact_sensitivity_oracle, init_model

spec = MlpSpec((8, 24, 4))
data = generate_blobs(4, 8, 50, 3.0, seed=0)
state = ClientState(0, init_model(spec, np.random.default_rng(0)), ClientShard(0, data, data), spec)
end, sens, mask = local_train(state, epochs=1, lr=0.1, batch_size=25, tau=0.1)
print("critical parameters:", mask.popcount(), "of", end.total_count)


# ## Compare with the exact loss change
#
# For a model this small we can zero every parameter in turn and measure the
# real change in loss. The cheap score should pick mostly the same top 10%.

# In[2]:

approx = sens.flatten()
exact = np.array([exact_sensitivity_oracle(end, spec, data.features, data.labels, i)
                  for i in range(end.total_count)])
k = mask.popcount()
top_a = set(np.argsort(-approx, kind="stable")[:k])
top_e = set(np.argsort(-exact, kind="stable")[:k])
print(f"agreement of top-{k} sets: {len(top_a & top_e) / k:.2f}")


# ## One bit per parameter on the wire

# In[3]:

blob = serialize_mask(mask)
print("mask bytes:", len(blob), "(header", header_size(len(mask.layers)), ")")
print("model bytes at float32:", 4 * end.total_count)


# ## Overlap between two clients
#
# Two clients trained on the same classes pick more of the same parameters
# than two clients on different classes.

# In[4]:

def trained_mask(classes, seed):
    idx = np.flatnonzero(np.isin(data.labels, classes))
    sub = data.subset(idx)
    st = ClientState(seed, init_model(spec, np.random.default_rng(9)), ClientShard(seed, sub, sub), spec)
    return local_train(st, 5, 0.1, 25, tau=0.5)[2]

a = trained_mask([0, 1], 1)
b = trained_mask([0, 1], 2)
c = trained_mask([2, 3], 3)
print(f"same classes {overlap_ratio(a, b):.3f}   different classes {overlap_ratio(a, c):.3f}")
