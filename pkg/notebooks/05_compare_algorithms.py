# coding: utf-8

# # FedCAC against its baselines
#
# On a pathological split each client only ever sees two classes. A single
# averaged model (FedAvg) has to serve everyone and does badly; purely local
# training (Separate) does well but wastes what clients share; FedCAC shares
# the non-critical parameters with everyone and the critical ones only with
# similar clients.
#
# This uses the same setup as `configs/blobs_pathological.toml` and takes a
# few seconds per algorithm.

# In[1]:

from fedcac.data import PartitionSpec
from fedcac.nn import MlpSpec
from fedcac.orchestrator import DataSpec, RunConfig, run

base = dict(num_clients=16, rounds=60, epochs=5, tau=0.5, beta=20, lr=0.1, batch_size=100,
            data=DataSpec(num_classes=8, dims=16, separation=2.0),
            partition=PartitionSpec("pathological", classes_per_client=2,
                                    train_per_client=50, test_per_client=100),
            model=MlpSpec((16, 64, 8)), seed=0)

for algorithm in ("fedavg", "fedper", "separate", "fedcac"):
    _, best = run(RunConfig(algorithm=algorithm, **base))
    print(f"{algorithm:9s} best mean accuracy {best:.4f}")


# ## Ablations
#
# Keeping the critical parameters fully local, the choice of *which*
# parameters count as critical matters: the sensitivity score beats a random
# pick, which beats the reverse ranking.

# In[2]:

for selector in ("sensitivity", "random", "sensitivity_reverse"):
    history, _ = run(RunConfig(selector=selector, collaboration="none", **base))
    print(f"{selector:20s} final mean accuracy {history[-1].mean_accuracy:.4f}")
