"""Parameter sensitivity, critical-parameter masks and their wire format."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import StructureError
from .nn import ParameterSet, SensitivityMap

SELECTORS = ("sensitivity", "random", "sensitivity_reverse")


@dataclass
class CriticalMask:
    """One boolean per parameter, laid out like the model it was computed from.

    Stat layers (running mean/variance) are always critical.
    """

    layers: dict[str, np.ndarray]
    stats: frozenset = field(default_factory=frozenset)
    tau: float = 0.0

    @property
    def names(self):
        return list(self.layers)

    @property
    def total_count(self) -> int:
        return int(sum(v.size for v in self.layers.values()))

    def popcount(self, gradient_only=False) -> int:
        return int(sum(v.sum() for n, v in self.layers.items() if not (gradient_only and n in self.stats)))

    def flatten(self) -> np.ndarray:
        if not self.layers:
            return np.zeros(0, dtype=bool)
        return np.concatenate([v.ravel() for v in self.layers.values()])

    def structure(self):
        return tuple((n, v.shape) for n, v in self.layers.items())

    def check_compatible(self, other) -> None:
        if self.structure() != other.structure():
            raise StructureError("masks differ in layer names, order or shapes")

    def equals(self, other) -> bool:
        return self.structure() == other.structure() and all(
            np.array_equal(v, other.layers[n]) for n, v in self.layers.items()
        )

    @classmethod
    def full(cls, params: ParameterSet, value: bool) -> "CriticalMask":
        layers = {n: np.full(v.shape, value or n in params.stats, dtype=bool) for n, v in params.items()}
        return cls(layers, params.stats, 1.0 if value else 0.0)


def compute_sensitivity(theta_start: ParameterSet, theta_end: ParameterSet) -> SensitivityMap:
    """``|(end - start) * end|`` per parameter; stat layers get zeros."""
    theta_start.check_compatible(theta_end)
    out = {}
    for name, end in theta_end.items():
        if name in theta_end.stats:
            out[name] = np.zeros_like(end)
        else:
            out[name] = np.abs((end - theta_start[name]) * end)
    return theta_end.with_layers(out)


def critical_count(size: int, tau: float) -> int:
    # round half up, then clamp
    return min(max(int(math.floor(tau * size + 0.5)), 0), size)


def select_critical(sens: SensitivityMap, tau: float, selector="sensitivity", rng=None) -> CriticalMask:
    """Mark the top-``tau`` fraction of each layer as critical.

    ``selector`` switches to the ablation rules: ``random`` picks positions
    uniformly (needs ``rng``), ``sensitivity_reverse`` picks the least
    sensitive ones. Ties go to the lower flat index in both sorted rules.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if selector not in SELECTORS:
        raise ValueError(f"unknown selector {selector!r}")
    if selector == "random" and rng is None:
        raise ValueError("the random selector needs an rng")
    layers = {}
    for name, s in sens.items():
        if name in sens.stats:
            layers[name] = np.ones(s.shape, dtype=bool)
            continue
        flat = s.ravel()
        k = critical_count(flat.size, tau)
        if selector == "sensitivity":
            chosen = np.argsort(-flat, kind="stable")[:k]
        elif selector == "sensitivity_reverse":
            chosen = np.argsort(flat, kind="stable")[:k]
        else:
            chosen = rng.choice(flat.size, size=k, replace=False)
        bits = np.zeros(flat.size, dtype=bool)
        bits[chosen] = True
        layers[name] = bits.reshape(s.shape)
    return CriticalMask(layers, sens.stats, tau)


_U32 = struct.Struct("<I")


def serialize_mask(mask: CriticalMask) -> bytes:
    """Layer count and per-layer bit lengths (uint32 LE), then LSB-first packed bits."""
    bits = [v.ravel() for v in mask.layers.values()]
    header = _U32.pack(len(bits)) + b"".join(_U32.pack(b.size) for b in bits)
    payload = b"".join(np.packbits(b.astype(np.uint8), bitorder="little").tobytes() for b in bits)
    return header + payload


def deserialize_bits(data: bytes) -> list[np.ndarray]:
    """Decode a mask message into one flat boolean array per layer."""
    data = bytes(data)
    if len(data) < 4:
        raise ValueError("truncated mask message: no header")
    (count,) = _U32.unpack_from(data, 0)
    offset = 4
    if len(data) < offset + 4 * count:
        raise ValueError("truncated mask message: incomplete layer table")
    lengths = [_U32.unpack_from(data, offset + 4 * i)[0] for i in range(count)]
    offset += 4 * count
    out = []
    for length in lengths:
        nbytes = (length + 7) // 8
        if len(data) < offset + nbytes:
            raise ValueError("truncated mask message: payload too short")
        chunk = np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=offset)
        out.append(np.unpackbits(chunk, count=length, bitorder="little").astype(bool))
        offset += nbytes
    if offset != len(data):
        raise ValueError(f"mask message has {len(data) - offset} trailing bytes")
    return out


def deserialize_mask(data: bytes, template) -> CriticalMask:
    """Decode into the layer names/shapes of ``template`` (a ParameterSet or CriticalMask)."""
    bits = deserialize_bits(data)
    items = list(template.layers.items())
    if len(bits) != len(items) or any(b.size != v.size for b, (_, v) in zip(bits, items)):
        raise StructureError("mask message does not match the template structure")
    layers = {n: b.reshape(v.shape) for b, (n, v) in zip(bits, items)}
    return CriticalMask(layers, frozenset(getattr(template, "stats", ())), getattr(template, "tau", 0.0))


def header_size(num_layers: int) -> int:
    return 4 + 4 * num_layers


def overlap_ratio(a: CriticalMask, b: CriticalMask) -> float:
    """``1 - hamming(a, b) / (2n)``: 1 for identical masks, 1/2 for complementary ones."""
    a.check_compatible(b)
    n = a.total_count
    if n == 0:
        return 1.0
    hamming = sum(int(np.count_nonzero(v != b.layers[name])) for name, v in a.layers.items())
    return 1.0 - hamming / (2.0 * n)


def overlap_matrix(masks) -> np.ndarray:
    """Pairwise overlap ratios. The diagonal is set to 1 and is never read."""
    flat = np.stack([m.flatten() for m in masks]).astype(np.int64)
    n = flat.shape[1]
    if n == 0:
        return np.ones((len(masks), len(masks)))
    # hamming(i, j) = |i| + |j| - 2 |i & j|
    shared = flat @ flat.T
    pop = np.diag(shared)
    hamming = pop[:, None] + pop[None, :] - 2 * shared
    out = 1.0 - hamming / (2.0 * n)
    np.fill_diagonal(out, 1.0)
    return out
