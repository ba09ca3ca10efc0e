"""Server side of a round: collaborator selection and the two aggregations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, StructureError
from .nn import ParameterSet


@dataclass
class RoundPlan:
    round: int
    overlap: np.ndarray | None = None
    o_avg: float | None = None
    o_max: float | None = None
    threshold: float | None = None
    collaborators: list[set[int]] = field(default_factory=list)
    global_model: ParameterSet | None = None
    custom_models: list[ParameterSet] = field(default_factory=list)

    @property
    def mean_collab_size(self) -> float | None:
        if not self.collaborators:
            return None
        return float(np.mean([len(c) for c in self.collaborators]))


def _off_diagonal(overlap):
    overlap = np.asarray(overlap, dtype=np.float64)
    n = overlap.shape[0]
    if overlap.shape != (n, n):
        raise ConfigurationError("overlap matrix must be square")
    return overlap[~np.eye(n, dtype=bool)], n


def compute_threshold(overlap, t, beta):
    """Return ``(o_avg, o_max, threshold)`` with ``threshold = o_avg + t/beta * (o_max - o_avg)``.

    ``o_avg`` averages all ordered pairs ``i != j``.
    """
    off, n = _off_diagonal(overlap)
    if n < 2:
        raise ConfigurationError("threshold needs at least two clients")
    if t < 1 or beta < 1:
        raise ConfigurationError("need t >= 1 and beta >= 1")
    o_avg = float(off.sum() / (n * (n - 1)))
    o_max = float(off.max())
    return o_avg, o_max, o_avg + (t / beta) * (o_max - o_avg)


def select_collaborators(overlap, threshold) -> list[set[int]]:
    overlap = np.asarray(overlap)
    n = overlap.shape[0]
    return [{j for j in range(n) if j != i and overlap[i, j] >= threshold} for i in range(n)]


def fixed_number_collaborators(overlap, k) -> list[set[int]]:
    """The ``k`` highest-overlap partners of each client, ties to the lower id."""
    overlap = np.asarray(overlap)
    n = overlap.shape[0]
    if not 1 <= k <= n - 1:
        raise ConfigurationError(f"k must lie in [1, {n - 1}], got {k}")
    out = []
    for i in range(n):
        others = sorted((j for j in range(n) if j != i), key=lambda j: (-overlap[i, j], j))
        out.append(set(others[:k]))
    return out


def _mean(models):
    first = models[0]
    for m in models[1:]:
        if m.structure() != first.structure():
            raise StructureError("cannot aggregate models with different structures")
    layers = {}
    for name in first:
        # sorting along the client axis makes the sum independent of client order
        stacked = np.sort(np.stack([m[name] for m in models]), axis=0)
        layers[name] = stacked.sum(axis=0) / len(models)
    return first.with_layers(layers)


def aggregate_global(models) -> ParameterSet:
    """Uniform element-wise mean of all client models, stat layers included."""
    if not models:
        raise ConfigurationError("nothing to aggregate")
    return _mean(list(models))


def aggregate_custom(models, collaborators, self_id) -> ParameterSet:
    """Uniform mean of the client's own model and its collaborators' models.

    With ``collaborators`` equal to all other clients the result is bitwise
    identical to :func:`aggregate_global`.
    """
    if not 0 <= self_id < len(models):
        raise ConfigurationError(f"self_id {self_id} out of range")
    if self_id in collaborators:
        raise ConfigurationError("a client cannot be its own collaborator")
    members = sorted(set(collaborators) | {self_id})
    return _mean([models[j] for j in members])
