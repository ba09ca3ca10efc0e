# coding: utf-8

# # Diagnostics: update angles, overlap study, heatmaps
#
# The CSV probes of the command-line tool are thin wrappers over the
# functions shown here.

# In[1]:

import os
import tempfile

import numpy as np

from fedcac.data import PartitionSpec
from fedcac.nn import MlpSpec
from fedcac.orchestrator import (DataSpec, RunConfig, build_clients, export_sensitivity_heatmap,
                                 gradient_angle_probe, overlap_similarity_study, run)

base = dict(num_clients=2, rounds=30, epochs=5, beta=10, batch_size=100,
            data=DataSpec(num_classes=8, dims=16, separation=2.0),
            partition=PartitionSpec("pathological", train_per_client=50, test_per_client=100),
            model=MlpSpec((16, 64, 8)), seed=0)


# ## Angle between two clients' updates under FedAvg
#
# Two clients with disjoint classes pull the shared model in increasingly
# opposite directions as training goes on.

# In[2]:

angles = gradient_angle_probe(RunConfig(algorithm="fedavg", **base), 0, 1)
print("first rounds:", np.round(angles[:5], 1))
print("last rounds: ", np.round(angles[-5:], 1))


# ## Overlap study on planted clients
#
# Clients are laid out so that some pairs share their classes, some share
# one class and the rest share none. Mask overlap follows that order.

# In[3]:

study = RunConfig(**{**base, "num_clients": 12, "rounds": 10, "beta": 5})
for pair, value in overlap_similarity_study(study):
    print(f"{pair:18s} {value:.4f}")


# ## Sensitivity heatmap of the output layer
#
# Rows of the last weight matrix belong to classes; a client's own classes
# carry most of the sensitivity.

# In[4]:

config = RunConfig(**{**base, "rounds": 5, "beta": 5})
clients = build_clients(config)
run(config, clients=clients)
path = os.path.join(tempfile.mkdtemp(), "heatmap.csv")
export_sensitivity_heatmap(clients[0], "fc1.weight", path)
rows = np.loadtxt(path, delimiter=",")
print("client 0 classes:", sorted(clients[0].shard.classes))
print("mean sensitivity per class row:", np.round(rows.mean(axis=1), 5))
