"""Synthetic Gaussian-blob data and non-IID client partitioners."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, PartitionError


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self):
        return len(self.labels)

    def histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


@dataclass
class ClientShard:
    client_id: int
    train: Dataset
    test: Dataset
    # positions in the source dataset, kept so leakage can be checked
    train_index: np.ndarray | None = None
    test_index: np.ndarray | None = None

    @property
    def classes(self) -> frozenset[int]:
        return frozenset(np.flatnonzero(self.train.histogram() + self.test.histogram()).tolist())


@dataclass
class PartitionSpec:
    mode: str = "pathological"
    num_clients: int = 40
    classes_per_client: int = 2
    alpha: float = 0.1
    train_per_client: int = 500
    test_per_client: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("pathological", "dirichlet"):
            raise ConfigurationError(f"unknown partition mode {self.mode!r}")
        if self.num_clients < 1:
            raise ConfigurationError("num_clients must be positive")
        if self.mode == "pathological" and self.classes_per_client < 1:
            raise ConfigurationError("classes_per_client must be >= 1")
        if self.mode == "dirichlet" and not self.alpha > 0:
            raise ConfigurationError("alpha must be > 0")
        if self.train_per_client < 1 or self.test_per_client < 0:
            raise ConfigurationError("per-client sample counts must be positive")


def _blob_centers(num_classes, dims, separation, rng):
    if num_classes <= dims:
        # orthonormal directions scaled so every pair is exactly `separation` apart
        q, _ = np.linalg.qr(rng.standard_normal((dims, num_classes)))
        return q.T * (separation / np.sqrt(2.0))
    # more classes than dimensions: rejection-sample inside a growing cube
    side = separation * num_classes ** (1.0 / dims) * 2.0
    centers = []
    attempts = 0
    while len(centers) < num_classes:
        c = rng.uniform(-side / 2, side / 2, size=dims)
        if all(np.linalg.norm(c - o) >= separation for o in centers):
            centers.append(c)
        attempts += 1
        if attempts % 1000 == 0:
            side *= 1.5
    return np.array(centers)


def generate_blobs(num_classes, dims, samples_per_class, separation, seed, noise=1.0) -> Dataset:
    """Isotropic Gaussian classes with centers pairwise at least ``separation`` apart.

    Samples are ordered by class.
    """
    if min(num_classes, dims, samples_per_class) < 1 or not separation > 0:
        raise ConfigurationError("generate_blobs arguments must be positive")
    rng = np.random.default_rng(seed)
    centers = _blob_centers(num_classes, dims, separation, rng)
    noise_draw = rng.standard_normal((num_classes, samples_per_class, dims))
    features = (centers[:, None, :] + noise * noise_draw).reshape(-1, dims)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    return Dataset(features, labels, num_classes)


def largest_remainder(proportions, total) -> np.ndarray:
    """Integer counts summing to ``total`` that best follow ``proportions``."""
    p = np.asarray(proportions, dtype=np.float64)
    p = p / p.sum()
    raw = p * total
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    if short:
        # stable: equal remainders go to the lower class index
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


class _Pool:
    """Per-class queues of shuffled sample positions, drawn without replacement."""

    def __init__(self, data, rng):
        self.queues = []
        for c in range(data.num_classes):
            idx = np.flatnonzero(data.labels == c)
            self.queues.append(list(rng.permutation(idx)))

    def take(self, cls, count):
        q = self.queues[cls]
        if count > len(q):
            raise PartitionError(
                f"class {cls} exhausted: need {count} more samples, {len(q)} left"
            )
        out, self.queues[cls] = q[:count], q[count:]
        return out


def _build_shards(data, train_counts, test_counts, rng):
    pool = _Pool(data, rng)
    shards = []
    for cid, (tr, te) in enumerate(zip(train_counts, test_counts)):
        tr_idx, te_idx = [], []
        for c in range(data.num_classes):
            tr_idx += pool.take(c, int(tr[c]))
            te_idx += pool.take(c, int(te[c]))
        tr_idx = np.array(sorted(tr_idx), dtype=np.int64)
        te_idx = np.array(sorted(te_idx), dtype=np.int64)
        shards.append(ClientShard(cid, data.subset(tr_idx), data.subset(te_idx), tr_idx, te_idx))
    return shards


def assign_classes(num_classes, num_clients, classes_per_client, rng) -> list[list[int]]:
    """Deal classes to clients from a stream of fresh permutations.

    Each pass over the stream is a new shuffle of all classes, so every
    class gets used before any class is reused. A client never receives the
    same class twice; a class that would duplicate is held for the next
    client.
    """
    if classes_per_client > num_classes:
        raise PartitionError(
            f"classes_per_client={classes_per_client} exceeds num_classes={num_classes}"
        )
    pending: list[int] = []
    result = []
    for _ in range(num_clients):
        chosen: list[int] = []
        i = 0
        while len(chosen) < classes_per_client:
            if i >= len(pending):
                pending += rng.permutation(num_classes).tolist()
            c = pending[i]
            if c in chosen:
                i += 1
                continue
            chosen.append(pending.pop(i))
        result.append(sorted(chosen))
    return result


def partition_pathological(data: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    if spec.mode != "pathological":
        raise ConfigurationError("partition_pathological needs mode='pathological'")
    rng = np.random.default_rng(spec.seed)
    assignment = assign_classes(data.num_classes, spec.num_clients, spec.classes_per_client, rng)
    train_counts, test_counts = [], []
    for classes in assignment:
        prop = np.zeros(data.num_classes)
        prop[classes] = 1.0
        train_counts.append(largest_remainder(prop, spec.train_per_client))
        test_counts.append(largest_remainder(prop, spec.test_per_client))
    return _build_shards(data, train_counts, test_counts, rng)


def partition_dirichlet(data: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    if spec.mode != "dirichlet":
        raise ConfigurationError("partition_dirichlet needs mode='dirichlet'")
    rng = np.random.default_rng(spec.seed)
    prior = data.histogram() / len(data)
    train_counts, test_counts = [], []
    for _ in range(spec.num_clients):
        q = rng.dirichlet(spec.alpha * prior)
        if not np.isfinite(q).all() or q.sum() <= 0:
            # extremely small concentrations can underflow every component
            q = np.zeros_like(prior)
            q[rng.choice(len(prior), p=prior)] = 1.0
        train_counts.append(largest_remainder(q, spec.train_per_client))
        test_counts.append(largest_remainder(q, spec.test_per_client))
    return _build_shards(data, train_counts, test_counts, rng)


def partition(data: Dataset, spec: PartitionSpec) -> list[ClientShard]:
    if spec.mode == "pathological":
        return partition_pathological(data, spec)
    return partition_dirichlet(data, spec)


def required_samples_per_class(spec: PartitionSpec, num_classes: int) -> int:
    """A per-class pool size that can never be exhausted by ``spec``."""
    per_client = spec.train_per_client + spec.test_per_client
    if spec.mode == "pathological":
        k = spec.classes_per_client
        # a class is used by at most ceil(N*k/C)+1 clients (one extra for a
        # deferred duplicate), each taking ceil(quota/k)
        uses = -(-spec.num_clients * k // num_classes) + 1
        per_use = -(-spec.train_per_client // k) + -(-spec.test_per_client // k)
        return uses * per_use
    return spec.num_clients * per_client


def export_partition_viz(shards, path) -> None:
    """Write ``client_id,class,count`` rows (training samples, nonzero counts only)."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["client_id", "class", "count"])
        for shard in shards:
            hist = shard.train.histogram()
            for c in np.flatnonzero(hist):
                writer.writerow([shard.client_id, int(c), int(hist[c])])
    os.replace(tmp, path)
