"""Client side of a round: masked re-initialization, local SGD, evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import seeding
from .data import ClientShard
from .errors import DataError, StructureError
from .mask import CriticalMask, compute_sensitivity, select_critical
from .nn import MlpSpec, ParameterSet, SensitivityMap, loss_and_grad, predict, sgd_step, update_norm_stats


@dataclass
class ClientState:
    client_id: int
    model: ParameterSet
    shard: ClientShard
    spec: MlpSpec
    mask: CriticalMask | None = None
    # stream id for shuffling; equal to client_id unless two clients are
    # deliberately given the same randomness
    rng_seed: int | None = None
    root_seed: int = 0
    sensitivity: SensitivityMap | None = None
    round_start: ParameterSet | None = None

    def __post_init__(self):
        if self.rng_seed is None:
            self.rng_seed = self.client_id


def local_init(state: ClientState, global_model: ParameterSet, custom_model: ParameterSet) -> ParameterSet:
    """Critical positions from ``custom_model``, all others from ``global_model``."""
    if state.mask is None:
        raise StructureError(f"client {state.client_id} has no mask yet")
    global_model.check_compatible(custom_model)
    if tuple((n, v.shape) for n, v in global_model.items()) != state.mask.structure():
        raise StructureError("mask does not match the model structure")
    layers = {
        name: np.where(state.mask.layers[name], custom_model[name], g)
        for name, g in global_model.items()
    }
    return global_model.with_layers(layers)


def train_epochs(state: ClientState, epochs, lr, batch_size, round_index) -> ParameterSet:
    """Plain mini-batch SGD over shuffled batches; returns the final model."""
    train = state.shard.train
    n = len(train)
    if n == 0:
        raise DataError(f"client {state.client_id} has an empty training shard")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    batch_size = max(1, min(int(batch_size), n))
    rng = seeding.make_rng(state.root_seed, seeding.SHUFFLE, state.rng_seed, round_index)
    model = state.model
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            _, grad, cache = loss_and_grad(model, state.spec, train.features[idx], train.labels[idx])
            model = update_norm_stats(sgd_step(model, grad, lr), state.spec, cache)
    return model


def local_train(state: ClientState, epochs, lr, batch_size, *, tau=0.5, round_index=1,
                selector="sensitivity"):
    """Train for ``epochs`` epochs, then score parameters and pick the critical ones.

    Sensitivity is measured against the model the client held at the start
    of this call, so it reflects only this round's local drift. Updates
    ``state`` in place and returns ``(model_end, sensitivity, mask)``.
    """
    start = state.model
    end = train_epochs(state, epochs, lr, batch_size, round_index)
    sens = compute_sensitivity(start, end)
    rng = None
    if selector == "random":
        rng = seeding.make_rng(state.root_seed, seeding.SELECT, state.rng_seed, round_index)
    mask = select_critical(sens, tau, selector, rng)
    state.round_start = start
    state.model = end
    state.sensitivity = sens
    state.mask = mask
    return end, sens, mask


def evaluate(state: ClientState, model: ParameterSet | None = None) -> float:
    """Top-1 accuracy on the client's test shard."""
    test = state.shard.test
    if len(test) == 0:
        raise DataError(f"client {state.client_id} has an empty test shard")
    pred = predict(state.model if model is None else model, state.spec, test.features)
    return float(np.mean(pred == test.labels))
