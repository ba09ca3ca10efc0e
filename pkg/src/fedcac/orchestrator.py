"""Round loop for FedCAC and the baselines, plus the diagnostic probes."""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .client import ClientState, evaluate, local_init, local_train
from .data import (ClientShard, Dataset, PartitionSpec, generate_blobs, largest_remainder, partition,
                   required_samples_per_class)
from .errors import ConfigurationError, FedCACError, RoundError
from .mask import SELECTORS, overlap_matrix, overlap_ratio
from .nn import MlpSpec, ParameterSet, init_model, linear_names
from .server import (RoundPlan, aggregate_custom, aggregate_global, compute_threshold,
                     fixed_number_collaborators, select_collaborators)

ALGORITHMS = ("fedcac", "fedavg", "separate", "fedper")
NONCRITICAL_MODES = ("all", "as_critical")
_FIXED = re.compile(r"^fixed_number\((\d+)\)$")


@dataclass
class DataSpec:
    num_classes: int = 10
    dims: int = 32
    separation: float = 3.0
    noise: float = 1.0
    # 0 means "just enough for the partition to never run out"
    samples_per_class: int = 0


@dataclass
class RunConfig:
    algorithm: str = "fedcac"
    selector: str = "sensitivity"
    collaboration: str = "time_varying"
    noncritical_mode: str = "all"
    num_clients: int = 40
    rounds: int = 500
    epochs: int = 5
    tau: float = 0.5
    beta: float = 100.0
    lr: float = 0.1
    batch_size: int = 100
    data: DataSpec = field(default_factory=DataSpec)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    model: MlpSpec = field(default_factory=lambda: MlpSpec((32, 64, 10)))
    seed: int = 0

    def __post_init__(self):
        self.tau, self.beta, self.lr = float(self.tau), float(self.beta), float(self.lr)
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"algorithm must be one of {ALGORITHMS}")
        if self.selector not in SELECTORS:
            raise ConfigurationError(f"selector must be one of {SELECTORS}")
        if self.noncritical_mode not in NONCRITICAL_MODES:
            raise ConfigurationError(f"noncritical_mode must be one of {NONCRITICAL_MODES}")
        if self.collaboration not in ("time_varying", "none"):
            m = _FIXED.match(self.collaboration)
            if not m:
                raise ConfigurationError(
                    "collaboration must be time_varying, none or fixed_number(k)"
                )
            if not 1 <= int(m.group(1)) <= self.num_clients - 1:
                raise ConfigurationError("fixed_number(k) needs 1 <= k <= num_clients - 1")
        if self.rounds < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("rounds, epochs and batch_size must be >= 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigurationError("tau must lie in [0, 1]")
        if not 1.0 <= self.beta <= self.rounds:
            raise ConfigurationError("beta must lie in [1, rounds]")
        if not self.lr >= 0:
            raise ConfigurationError("lr must be non-negative")
        if self.num_clients < 1:
            raise ConfigurationError("num_clients must be >= 1")
        if self.algorithm == "fedcac" and self.collaboration == "time_varying" and self.num_clients < 2:
            raise ConfigurationError("time-varying collaboration needs at least two clients")
        if self.partition.num_clients != self.num_clients:
            self.partition = dataclasses.replace(self.partition, num_clients=self.num_clients)
        widths = self.model.layer_widths
        if widths[0] != self.data.dims or widths[-1] != self.data.num_classes:
            raise ConfigurationError(
                f"model widths {widths} do not match data dims={self.data.dims}, "
                f"classes={self.data.num_classes}"
            )

    @property
    def fixed_number(self) -> int | None:
        m = _FIXED.match(self.collaboration)
        return int(m.group(1)) if m else None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"]["layer_widths"] = list(self.model.layer_widths)
        return d


@dataclass
class RoundMetrics:
    round: int
    mean_accuracy: float
    per_client_accuracy: list[float]
    threshold: float | None = None
    mean_collab_size: float | None = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=False)


@dataclass
class RoundRecord:
    """Everything a round produced, handed to ``run``'s callback."""

    round: int
    clients: list[ClientState]
    starts: list[ParameterSet]
    ends: list[ParameterSet]
    plan: RoundPlan
    metrics: RoundMetrics


def make_dataset(config: RunConfig) -> Dataset:
    d = config.data
    per_class = d.samples_per_class or required_samples_per_class(config.partition, d.num_classes)
    return generate_blobs(d.num_classes, d.dims, per_class, d.separation,
                          seeding.derive_seed(config.seed, seeding.DATA), noise=d.noise)


def make_shards(config: RunConfig, data: Dataset | None = None) -> list[ClientShard]:
    data = make_dataset(config) if data is None else data
    spec = dataclasses.replace(config.partition, seed=seeding.derive_seed(config.seed, seeding.PARTITION))
    return partition(data, spec)


def build_clients(config: RunConfig, shards=None, rng_seeds=None) -> list[ClientState]:
    """Client states sharing one initial model.

    ``rng_seeds`` optionally overrides each client's shuffle stream id;
    giving two clients the same id (and the same shard) makes them train
    identically.
    """
    shards = make_shards(config) if shards is None else shards
    if len(shards) != config.num_clients:
        raise ConfigurationError(f"{len(shards)} shards for {config.num_clients} clients")
    init = init_model(config.model, seeding.make_rng(config.seed, seeding.INIT))
    rng_seeds = list(range(len(shards))) if rng_seeds is None else list(rng_seeds)
    return [
        ClientState(i, init.copy(), shard, config.model, rng_seed=rng_seeds[i], root_seed=config.seed)
        for i, shard in enumerate(shards)
    ]


def _collaborators(config: RunConfig, overlap, t, plan: RoundPlan):
    n = overlap.shape[0]
    if n >= 2:
        plan.o_avg, plan.o_max, plan.threshold = compute_threshold(overlap, t, config.beta)
    if config.collaboration == "none" or n < 2:
        return [set() for _ in range(n)]
    if config.fixed_number is not None:
        return fixed_number_collaborators(overlap, config.fixed_number)
    if t > config.beta:
        # independent phase; also covers the degenerate o_max == o_avg case
        return [set() for _ in range(n)]
    return select_collaborators(overlap, plan.threshold)


def server_step(config: RunConfig, clients: list[ClientState], t: int) -> RoundPlan:
    """Aggregate this round's client models and hand each client its next model."""
    models = [c.model for c in clients]
    plan = RoundPlan(round=t)
    algo = config.algorithm
    if algo == "separate":
        return plan
    plan.global_model = aggregate_global(models)
    if algo == "fedavg":
        for c in clients:
            c.model = plan.global_model.copy()
    elif algo == "fedper":
        personal = set(linear_names(config.model.num_linear - 1))
        for c in clients:
            layers = {n: (c.model[n] if n in personal else v.copy()) for n, v in plan.global_model.items()}
            c.model = c.model.with_layers(layers)
    else:
        plan.overlap = overlap_matrix([c.mask for c in clients])
        plan.collaborators = _collaborators(config, plan.overlap, t, plan)
        plan.custom_models = [aggregate_custom(models, plan.collaborators[i], i) for i in range(len(clients))]
        for c, u in zip(clients, plan.custom_models):
            if config.noncritical_mode == "as_critical":
                c.model = u.copy()
            else:
                c.model = local_init(c, plan.global_model, u)
    return plan


def run(config: RunConfig, workers=1, callback=None, clients=None):
    """Simulate ``config.rounds`` rounds; return ``(history, best_accuracy)``.

    Each round: every client trains locally and derives its mask, the
    server aggregates, every client receives its next model, and each
    client's resulting model is scored on its own test shard.
    """
    clients = build_clients(config) if clients is None else clients
    history: list[RoundMetrics] = []

    def train_one(c, t):
        local_train(c, config.epochs, config.lr, config.batch_size, tau=config.tau,
                    round_index=t, selector=config.selector)

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t in range(1, config.rounds + 1):
            try:
                if pool is None:
                    for c in clients:
                        train_one(c, t)
                else:
                    list(pool.map(lambda c: train_one(c, t), clients))
                starts = [c.round_start for c in clients]
                ends = [c.model for c in clients]
                plan = server_step(config, clients, t)
                acc = [evaluate(c) for c in clients]
            except (FedCACError, ValueError, FloatingPointError) as exc:
                raise RoundError(t, exc) from exc
            metrics = RoundMetrics(
                round=t,
                mean_accuracy=float(np.mean(acc)),
                per_client_accuracy=acc,
                threshold=plan.threshold,
                mean_collab_size=plan.mean_collab_size,
            )
            history.append(metrics)
            if callback is not None:
                callback(RoundRecord(t, clients, starts, ends, plan, metrics))
    finally:
        if pool is not None:
            pool.shutdown()
    best = max(m.mean_accuracy for m in history)
    return history, best


def update_angle(u: np.ndarray, v: np.ndarray) -> float | None:
    """Angle in degrees between two update vectors, ``None`` if either is zero."""
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return None
    a, b = u / nu, v / nv
    # 2*atan2(|a-b|, |a+b|) stays accurate near 0 and 180 degrees
    return float(np.degrees(2.0 * np.arctan2(np.linalg.norm(a - b), np.linalg.norm(a + b))))


def gradient_angle_probe(config: RunConfig, client_a: int, client_b: int, clients=None, workers=1):
    """Per-round angle between two clients' local updates (gradient layers only)."""
    if client_a == client_b:
        raise ConfigurationError("angle probe needs two distinct clients")
    angles = []

    def record(rec: RoundRecord):
        du = rec.ends[client_a].flatten(True) - rec.starts[client_a].flatten(True)
        dv = rec.ends[client_b].flatten(True) - rec.starts[client_b].flatten(True)
        angles.append(update_angle(du, dv))

    run(config, workers=workers, callback=record, clients=clients)
    return angles


PAIR_TYPES = ("same_distribution", "class_overlap", "disjoint")


def planted_shards(config: RunConfig, duplicate=False):
    """Shards with known pair relations for the overlap study.

    For every consecutive class pair ``{2g, 2g+1}`` two clients hold that
    pair (independent samples, or the very same samples if ``duplicate``),
    and one "bridge" client holds ``{2g+1, 2g+2 mod C}``. Returns the shards
    and matching shuffle-stream ids (twins share one when ``duplicate``).
    """
    c = config.data.num_classes
    if c < 4 or c % 2:
        raise ConfigurationError("the planted layout needs an even number of classes >= 4")
    groups = c // 2
    class_sets = []
    for g in range(groups):
        class_sets += [(2 * g, 2 * g + 1), (2 * g, 2 * g + 1), (2 * g + 1, (2 * g + 2) % c)]
    spec = config.partition
    per_class = 3 * (spec.train_per_client + spec.test_per_client)
    d = config.data
    data = generate_blobs(c, d.dims, per_class, d.separation,
                          seeding.derive_seed(config.seed, seeding.DATA), noise=d.noise)
    rng = seeding.make_rng(config.seed, seeding.PARTITION)
    queues = {k: list(rng.permutation(np.flatnonzero(data.labels == k))) for k in range(c)}

    def draw(classes):
        prop = np.zeros(c)
        prop[list(classes)] = 1.0
        idx = []
        for quota in (spec.train_per_client, spec.test_per_client):
            chosen = []
            for k, count in enumerate(largest_remainder(prop, quota)):
                chosen += queues[k][:count]
                queues[k] = queues[k][count:]
            idx.append(np.array(sorted(chosen), dtype=np.int64))
        return idx

    shards, seeds = [], []
    for cid, classes in enumerate(class_sets):
        if duplicate and cid % 3 == 1:
            prev = shards[-1]
            shards.append(ClientShard(cid, prev.train, prev.test, prev.train_index, prev.test_index))
            seeds.append(seeds[-1])
            continue
        tr, te = draw(classes)
        shards.append(ClientShard(cid, data.subset(tr), data.subset(te), tr, te))
        seeds.append(cid)
    return shards, seeds


def pair_type(a: ClientShard, b: ClientShard) -> str:
    ca, cb = a.classes, b.classes
    if ca == cb:
        return "same_distribution"
    return "class_overlap" if ca & cb else "disjoint"


def overlap_similarity_study(config: RunConfig, duplicate=False, workers=1):
    """Mean mask overlap per planted pair type after ``config.rounds`` rounds.

    Returns a list of ``(pair_type, mean_overlap)`` rows.
    """
    shards, seeds = planted_shards(config, duplicate)
    config = dataclasses.replace(config, num_clients=len(shards),
                                 partition=dataclasses.replace(config.partition, num_clients=len(shards)))
    clients = build_clients(config, shards, seeds)
    run(config, workers=workers, clients=clients)
    by_type = {t: [] for t in PAIR_TYPES}
    for i in range(len(clients)):
        for j in range(i + 1, len(clients)):
            by_type[pair_type(shards[i], shards[j])].append(overlap_ratio(clients[i].mask, clients[j].mask))
    return [(t, float(np.mean(v))) for t, v in by_type.items() if v]


def export_sensitivity_heatmap(state: ClientState, layer: str, path) -> None:
    """Write one CSV row per output unit of ``layer`` holding its last sensitivities."""
    if state.sensitivity is None:
        raise ConfigurationError(f"client {state.client_id} has no sensitivity map yet")
    if layer not in state.sensitivity.layers:
        raise ConfigurationError(f"unknown layer {layer!r}; have {state.sensitivity.names}")
    values = state.sensitivity[layer]
    rows = values.reshape(values.shape[0], -1) if values.ndim > 1 else values.reshape(-1, 1)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for row in rows:
            writer.writerow([repr(float(x)) for x in row])
    os.replace(tmp, path)
