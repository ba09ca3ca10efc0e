import numpy as np
import pytest

from fedcac.data import PartitionSpec
from fedcac.nn import MlpSpec, init_model
from fedcac.orchestrator import DataSpec, RunConfig


def small_config(**kw):
    """A few-second run: 4 clients, 3 rounds."""
    base = dict(
        algorithm="fedcac", num_clients=4, rounds=3, epochs=2, tau=0.5, beta=2, lr=0.1,
        batch_size=20,
        data=DataSpec(num_classes=4, dims=6, separation=3.0),
        partition=PartitionSpec(mode="pathological", classes_per_client=2,
                                train_per_client=40, test_per_client=20),
        model=MlpSpec((6, 12, 4)),
        seed=3,
    )
    base.update(kw)
    return RunConfig(**base)


def blob_config(**kw):
    """The desk-scale pathological setup shared by the ordering experiments."""
    base = dict(
        algorithm="fedcac", num_clients=16, rounds=60, epochs=5, tau=0.5, beta=20, lr=0.1,
        batch_size=100,
        data=DataSpec(num_classes=8, dims=16, separation=2.0),
        partition=PartitionSpec(mode="pathological", classes_per_client=2,
                                train_per_client=50, test_per_client=100),
        model=MlpSpec((16, 64, 8)),
        seed=0,
    )
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model(rng):
    spec = MlpSpec((2, 4, 3))
    return spec, init_model(spec, rng)


# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
