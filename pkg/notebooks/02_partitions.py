# coding: utf-8

# # Non-IID client shards
#
# The simulator uses synthetic Gaussian blobs and splits them over clients in
# one of two ways: *pathological* (each client sees a fixed number of classes)
# or *Dirichlet* (class proportions drawn from Dir(alpha)).

# In[1]:

import numpy as np

from fedcac.data import PartitionSpec, generate_blobs, partition

data = generate_blobs(num_classes=6, dims=4, samples_per_class=400, separation=3.0, seed=0)
print("samples per class:", data.histogram())


# ## Pathological: two classes per client

# In[2]:

spec = PartitionSpec("pathological", num_clients=6, classes_per_client=2,
                     train_per_client=60, test_per_client=20, seed=0)
for shard in partition(data, spec):
    print(shard.client_id, "train", shard.train.histogram(), "test", shard.test.histogram())


# ## Dirichlet: alpha controls the skew
#
# Small alpha concentrates each client on one or two classes; a large alpha
# gives nearly the global mix.

# In[3]:

for alpha in (0.05, 1.0, 100.0):
    spec = PartitionSpec("dirichlet", num_clients=6, alpha=alpha,
                         train_per_client=60, test_per_client=20, seed=0)
    props = np.array([s.train.histogram() / 60 for s in partition(data, spec)])
    print(f"alpha={alpha:<6} largest class share per client:", np.round(props.max(axis=1), 2))
