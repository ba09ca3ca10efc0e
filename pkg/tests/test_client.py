import numpy as np
import pytest

from fedcac.client import ClientState, evaluate, local_init, local_train
from fedcac.data import ClientShard, Dataset, generate_blobs
from fedcac.errors import DataError, StructureError
from fedcac.mask import CriticalMask
from fedcac.nn import MlpSpec, ParameterSet, init_model
from fedcac.orchestrator import DataSpec, build_clients, run

from conftest import small_config


def state_with_mask(bits):
    shape = (len(bits),)
    spec = MlpSpec((1, 1))
    dummy = Dataset(np.zeros((1, 1)), np.zeros(1, dtype=int), 1)
    state = ClientState(0, ParameterSet({"w": np.zeros(shape)}), ClientShard(0, dummy, dummy), spec)
    state.mask = CriticalMask({"w": np.asarray(bits, dtype=bool)})
    return state


def test_local_init_extremes():
    u = ParameterSet({"w": np.full(5, 2.0)})
    g = ParameterSet({"w": np.arange(5.0)})
    assert local_init(state_with_mask([1] * 5), g, u).equals(u)
    assert local_init(state_with_mask([0] * 5), g, u).equals(g)


def test_local_init_three_of_eight():
    bits = [0, 1, 0, 0, 1, 0, 1, 0]
    u = ParameterSet({"w": np.full(8, 2.0)})
    g = ParameterSet({"w": np.zeros(8)})
    out = local_init(state_with_mask(bits), g, u)["w"]
    assert (out == 2.0).sum() == 3 and (out == 0.0).sum() == 5
    np.testing.assert_array_equal(out == 2.0, np.array(bits, dtype=bool))


def test_local_init_idempotent_and_identity(rng):
    state = state_with_mask(rng.random(9) < 0.5)
    g = ParameterSet({"w": rng.normal(size=9)})
    u = ParameterSet({"w": rng.normal(size=9)})
    assert local_init(state, g, u).equals(local_init(state, g, u))
    assert local_init(state, g, g).equals(g)


def test_local_init_needs_mask_and_structure():
    state = state_with_mask([1, 0])
    state.mask = None
    g = ParameterSet({"w": np.zeros(2)})
    with pytest.raises(StructureError):
        local_init(state, g, g)
    state = state_with_mask([1, 0, 1])
    with pytest.raises(StructureError):
        local_init(state, g, g)


def test_zero_lr_keeps_model_and_zero_sensitivity():
    (c, *_) = build_clients(small_config())
    start = c.model.copy()
    end, sens, mask = local_train(c, 2, 0.0, 20)
    assert end.equals(start)
    assert all(not v.any() for _, v in sens.items())
    # all sensitivities tie, so the lowest indices are chosen
    for name, bits in mask.layers.items():
        k = int(bits.sum())
        assert bits.ravel()[:k].all() and not bits.ravel()[k:].any()


def test_one_epoch_on_one_batch_is_one_step():
    from fedcac.nn import loss_and_grad, sgd_step

    (c, *_) = build_clients(small_config())
    start = c.model.copy()
    train = c.shard.train
    end, _, _ = local_train(c, 1, 0.1, len(train))
    # a full batch in shuffled order has the same mean gradient up to rounding
    _, g, _ = loss_and_grad(start, c.spec, train.features, train.labels)
    ref = sgd_step(start, g, 0.1)
    for n in ref:
        np.testing.assert_allclose(end[n], ref[n], rtol=1e-12, atol=1e-14)


def test_local_train_deterministic():
    a = build_clients(small_config())[1]
    b = build_clients(small_config())[1]
    ea, _, ma = local_train(a, 2, 0.1, 16, round_index=4)
    eb, _, mb = local_train(b, 2, 0.1, 16, round_index=4)
    assert ea.equals(eb) and ma.equals(mb)
    assert a.mask is ma and a.round_start is not None


def test_local_train_empty_shard():
    (c, *_) = build_clients(small_config())
    empty = Dataset(np.zeros((0, 6)), np.zeros(0, dtype=int), 4)
    c.shard = ClientShard(0, empty, c.shard.test)
    with pytest.raises(DataError):
        local_train(c, 1, 0.1, 10)


def test_evaluate_constant_predictor():
    spec = MlpSpec((2, 2))
    model = ParameterSet({"fc0.weight": np.zeros((2, 2)), "fc0.bias": np.array([1.0, 0.0])})
    x = np.random.default_rng(0).normal(size=(10, 2))
    all0 = Dataset(x, np.zeros(10, dtype=int), 2)
    half = Dataset(x, np.arange(10) % 2, 2)
    assert evaluate(ClientState(0, model, ClientShard(0, all0, all0), spec)) == 1.0
    assert evaluate(ClientState(0, model, ClientShard(0, all0, half), spec)) == 0.5


def test_converged_two_class_client_is_accurate():
    cfg = small_config(algorithm="separate", rounds=10, epochs=3,
                       data=DataSpec(num_classes=4, dims=6, separation=6.0))
    history, _ = run(cfg)
    assert min(history[-1].per_client_accuracy) >= 0.95
