"""Personalized federated learning with critical-parameter collaboration (FedCAC)."""

from .client import ClientState, evaluate, local_init, local_train
from .data import (ClientShard, Dataset, PartitionSpec, export_partition_viz, generate_blobs,
                   partition_dirichlet, partition_pathological)
from .errors import (ConfigurationError, DataError, FedCACError, PartitionError, RoundError,
                     StructureError)
from .mask import (CriticalMask, compute_sensitivity, deserialize_mask, overlap_matrix, overlap_ratio,
                   select_critical, serialize_mask)
from .nn import (MlpSpec, NormStats, ParameterSet, SensitivityMap, exact_sensitivity_oracle, forward,
                 init_model, loss_and_grad, sgd_step)
from .orchestrator import (DataSpec, RoundMetrics, RunConfig, export_sensitivity_heatmap,
                           gradient_angle_probe, overlap_similarity_study, run)
from .server import (RoundPlan, aggregate_custom, aggregate_global, compute_threshold,
                     fixed_number_collaborators, select_collaborators)

__version__ = "0.1.0"
