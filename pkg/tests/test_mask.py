import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedcac.errors import StructureError
from fedcac.mask import (CriticalMask, compute_sensitivity, critical_count, deserialize_bits,
                         deserialize_mask, header_size, overlap_matrix, overlap_ratio, select_critical,
                         serialize_mask)
from fedcac.nn import MlpSpec, ParameterSet, init_model


def one_layer(values, name="w"):
    return ParameterSet({name: np.asarray(values, dtype=float)})


def bits_mask(bits, name="w"):
    return CriticalMask({name: np.asarray(bits, dtype=bool)})


def test_sensitivity_of_unchanged_model_is_zero(tiny_model):
    _, model = tiny_model
    sens = compute_sensitivity(model, model.copy())
    assert all(not v.any() for _, v in sens.items())


def test_sensitivity_arithmetic():
    sens = compute_sensitivity(one_layer([1.5, -1.0]), one_layer([2.0, 1.0]))
    np.testing.assert_array_equal(sens["w"], [1.0, 2.0])


def test_sensitivity_zero_on_stat_layers():
    spec = MlpSpec((3, 4, 2), use_norm_layer=True)
    a = init_model(spec, np.random.default_rng(0))
    b = a.with_layers({n: v + 1.0 for n, v in a.items()})
    sens = compute_sensitivity(a, b)
    for name in a.stats:
        assert not sens[name].any()
    assert sens["fc0.weight"].all()


def test_sensitivity_structure_mismatch():
    with pytest.raises(StructureError):
        compute_sensitivity(one_layer([1.0]), one_layer([1.0, 2.0]))


def test_select_extremes(tiny_model, rng):
    _, model = tiny_model
    sens = model.with_layers({n: rng.random(v.shape) for n, v in model.items()})
    assert select_critical(sens, 0.0).popcount() == 0
    full = select_critical(sens, 1.0)
    assert full.popcount() == model.total_count


def test_select_tie_goes_to_lower_index():
    mask = select_critical(one_layer([0.9, 0.1, 0.5, 0.5]), 0.5)
    assert np.flatnonzero(mask.layers["w"]).tolist() == [0, 2]


def test_select_reverse_and_random():
    s = one_layer([0.9, 0.1, 0.5, 0.5])
    rev = select_critical(s, 0.5, "sensitivity_reverse")
    assert np.flatnonzero(rev.layers["w"]).tolist() == [1, 2]
    rnd = select_critical(s, 0.5, "random", np.random.default_rng(0))
    assert rnd.popcount() == 2
    with pytest.raises(ValueError):
        select_critical(s, 0.5, "random")


def test_stat_layers_forced_critical():
    spec = MlpSpec((3, 4, 2), use_norm_layer=True)
    model = init_model(spec, np.random.default_rng(0))
    mask = select_critical(model.zeros_like(), 0.0)
    for name, bits in mask.layers.items():
        assert bits.all() == (name in model.stats)


def test_critical_count_rounding():
    assert critical_count(10, 0.25) == 3  # 2.5 rounds half up
    assert critical_count(10, 0.24) == 2
    assert critical_count(7, 1.0) == 7
    assert critical_count(0, 0.5) == 0


sens_maps = st.lists(
    st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=40), min_size=1, max_size=4
)


@given(sens_maps, st.floats(0, 1), st.floats(1e-3, 1e3))
def test_selection_scale_invariant_and_counts(layers, tau, scale):
    sens = ParameterSet({f"l{i}": v for i, v in enumerate(layers)})
    scaled = sens.with_layers({n: v * scale for n, v in sens.items()})
    a, b = select_critical(sens, tau), select_critical(scaled, tau)
    # rescaling may merge values that were distinct only by rounding; compare ranks instead
    if all(len(np.unique(v)) == len(np.unique(v * scale)) for _, v in sens.items()):
        assert a.equals(b)
    assert a.popcount() == sum(critical_count(len(v), tau) for v in layers)


def test_serialize_ten_ones():
    data = serialize_mask(bits_mask([1] * 10))
    assert data[:8] == (1).to_bytes(4, "little") + (10).to_bytes(4, "little")
    assert data[8:] == bytes([0xFF, 0x03])


def test_serialize_lsb_first():
    data = serialize_mask(bits_mask([1, 0, 0, 0, 0, 0, 0, 0, 0, 1]))
    assert data[8:] == bytes([0x01, 0x02])


def test_serialize_empty():
    data = serialize_mask(CriticalMask({}))
    assert data == (0).to_bytes(4, "little")
    assert deserialize_bits(data) == []


def test_payload_size_claim():
    n = 10000
    data = serialize_mask(bits_mask(np.ones(n)))
    payload = len(data) - header_size(1)
    assert payload == math.ceil(n / 8) == 1250
    assert payload / (4 * n) == pytest.approx(0.03125)
    assert len(data) / (4 * n) == pytest.approx(1 / 32, abs=0.01 * 1 / 32)


def test_deserialize_rejects_truncation():
    data = serialize_mask(bits_mask([1, 0, 1] * 7))
    for cut in (0, 3, 7, len(data) - 1):
        with pytest.raises(ValueError):
            deserialize_bits(data[:cut])
    with pytest.raises(ValueError):
        deserialize_bits(data + b"\x00")


@settings(max_examples=200)
@given(st.lists(st.lists(st.booleans(), max_size=70), max_size=5))
def test_round_trip(layers):
    mask = CriticalMask({f"l{i}": np.array(b, dtype=bool) for i, b in enumerate(layers)})
    assert mask.equals(deserialize_mask(serialize_mask(mask), mask))


def test_deserialize_template_mismatch():
    data = serialize_mask(bits_mask([1, 0, 1]))
    with pytest.raises(StructureError):
        deserialize_mask(data, bits_mask([1, 0]))


def test_overlap_identical_and_disjoint():
    a = np.zeros(100, dtype=bool)
    a[:50] = True
    assert overlap_ratio(bits_mask(a), bits_mask(a)) == 1.0
    assert overlap_ratio(bits_mask(a), bits_mask(~a)) == 0.5


def test_overlap_thirty_shared_positions():
    a = np.zeros(100, dtype=bool)
    b = np.zeros(100, dtype=bool)
    a[:50] = True
    b[20:70] = True
    shared = int(np.sum(a & b))
    hamming = sum(int(x != y) for x, y in zip(a, b))
    assert (shared, hamming) == (30, 40)
    assert overlap_ratio(bits_mask(a), bits_mask(b)) == pytest.approx(0.8, abs=1e-15)


def test_overlap_structure_mismatch():
    with pytest.raises(StructureError):
        overlap_ratio(bits_mask([1, 0]), bits_mask([1, 0, 1]))


@given(st.integers(2, 60), st.data())
def test_overlap_properties(n, data):
    k = data.draw(st.integers(0, n))
    perm_a = data.draw(st.permutations(range(n)))
    perm_b = data.draw(st.permutations(range(n)))
    a = np.zeros(n, dtype=bool)
    b = np.zeros(n, dtype=bool)
    a[list(perm_a[:k])] = True
    b[list(perm_b[:k])] = True
    ma, mb = bits_mask(a), bits_mask(b)
    o = overlap_ratio(ma, mb)
    assert o == overlap_ratio(mb, ma)
    assert 0.5 <= o <= 1.0
    assert (o == 1.0) == bool(np.array_equal(a, b))
    # swapping one unshared bit of b onto an unshared bit of a cannot lower the overlap
    only_b = np.flatnonzero(b & ~a)
    only_a = np.flatnonzero(a & ~b)
    if len(only_b):
        b2 = b.copy()
        b2[only_b[0]] = False
        b2[only_a[0]] = True
        assert overlap_ratio(ma, bits_mask(b2)) > o


def test_overlap_matrix_matches_pairwise(rng):
    masks = [bits_mask(rng.random(37) < 0.4) for _ in range(5)]
    mat = overlap_matrix(masks)
    for i in range(5):
        for j in range(5):
            if i != j:
                assert mat[i, j] == overlap_ratio(masks[i], masks[j])
