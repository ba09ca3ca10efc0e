# coding: utf-8

# # Who collaborates with whom, and for how long
#
# The server turns the pairwise mask overlaps into a threshold that starts at
# the mean off-diagonal overlap and rises linearly to the maximum at round
# beta. A client collaborates on its critical parameters only with clients
# whose overlap clears the threshold; after beta nobody does.

# In[1]:

import numpy as np

from fedcac.server import compute_threshold, select_collaborators

overlap = np.array([
    [1.00, 0.92, 0.81, 0.70],
    [0.92, 1.00, 0.78, 0.72],
    [0.81, 0.78, 1.00, 0.88],
    [0.70, 0.72, 0.88, 1.00],
])
beta = 5
for t in range(1, 8):
    o_avg, o_max, thr = compute_threshold(overlap, t, beta)
    sets = select_collaborators(overlap, thr) if t <= beta else [set()] * 4
    print(f"t={t}  threshold={thr:.3f}  sets={[sorted(s) for s in sets]}")


# ## The same inside a run
#
# `run` accepts a callback that sees each round's plan.

# In[2]:

from fedcac.data import PartitionSpec
from fedcac.nn import MlpSpec
from fedcac.orchestrator import DataSpec, RunConfig, run

config = RunConfig(num_clients=6, rounds=6, epochs=2, beta=4, batch_size=20,
                   data=DataSpec(num_classes=4, dims=6, separation=3.0),
                   partition=PartitionSpec("pathological", train_per_client=40, test_per_client=20),
                   model=MlpSpec((6, 12, 4)), seed=1)

def show(rec):
    print(rec.round, f"threshold={rec.plan.threshold:.3f}",
          "mean set size", rec.plan.mean_collab_size,
          f"accuracy={rec.metrics.mean_accuracy:.3f}")

history, best = run(config, callback=show)
print("best mean accuracy:", round(best, 3))
