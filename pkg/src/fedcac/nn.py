"""A small fully-connected network written directly against numpy.

Parameters live in a :class:`ParameterSet`, an ordered mapping from layer
name to a float64 array. The network functions are pure: they take a
parameter set and return new arrays, so clients can be trained on separate
threads without sharing state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ConfigurationError, DataError, StructureError


class ParameterSet:
    """Ordered named layers of float64 values.

    ``stats`` names the layers that hold non-gradient statistics (running
    mean/variance of the normalization layers). They travel with the model
    and are averaged like everything else, but never receive gradients.
    """

    def __init__(self, layers, stats=()):
        self.layers = {name: np.asarray(v, dtype=np.float64) for name, v in layers.items()}
        self.stats = frozenset(stats)
        unknown = self.stats - set(self.layers)
        if unknown:
            raise StructureError(f"stat layers not present: {sorted(unknown)}")

    # mapping-ish access
    def __getitem__(self, name) -> np.ndarray:
        return self.layers[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def items(self):
        return self.layers.items()

    @property
    def names(self) -> list[str]:
        return list(self.layers)

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [v.shape for v in self.layers.values()]

    @property
    def total_count(self) -> int:
        return int(sum(v.size for v in self.layers.values()))

    @property
    def gradient_names(self) -> list[str]:
        return [n for n in self.layers if n not in self.stats]

    def structure(self):
        return tuple((n, v.shape) for n, v in self.layers.items()), self.stats

    def check_compatible(self, other) -> None:
        if self.structure() != other.structure():
            raise StructureError("parameter sets differ in layer names, order, shapes or stat layers")

    def copy(self) -> "ParameterSet":
        return ParameterSet({n: v.copy() for n, v in self.layers.items()}, self.stats)

    def with_layers(self, layers) -> "ParameterSet":
        """Same structure, new values (arrays are used as given)."""
        return ParameterSet(layers, self.stats)

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet({n: np.zeros_like(v) for n, v in self.layers.items()}, self.stats)

    def flatten(self, gradient_only=False) -> np.ndarray:
        names = self.gradient_names if gradient_only else self.names
        if not names:
            return np.zeros(0)
        return np.concatenate([self.layers[n].ravel() for n in names])

    def locate(self, index) -> tuple[str, int]:
        """Translate a global flat index into ``(layer, flat offset)``."""
        if isinstance(index, tuple):
            name, offset = index
            if name not in self.layers or not 0 <= offset < self.layers[name].size:
                raise IndexError(f"invalid parameter coordinate {index!r}")
            return name, int(offset)
        index = int(index)
        if index < 0:
            raise IndexError(index)
        for name, v in self.layers.items():
            if index < v.size:
                return name, index
            index -= v.size
        raise IndexError("parameter index out of range")

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, v in self.layers.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.layers.values())

    def equals(self, other) -> bool:
        """Bit-for-bit equality (structure and values)."""
        return self.structure() == other.structure() and all(
            np.array_equal(self.layers[n], other.layers[n]) for n in self.layers
        )

    def __repr__(self):
        inner = ", ".join(f"{n}{tuple(v.shape)}" for n, v in self.layers.items())
        return f"ParameterSet({inner})"


# A sensitivity map has exactly the parameter-set structure.
SensitivityMap = ParameterSet


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    activation: str = "relu"
    use_norm_layer: bool = False
    norm_momentum: float = 0.1
    norm_eps: float = 1e-5

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ConfigurationError(f"need at least two positive layer widths, got {widths}")
        if self.activation not in ("relu", "tanh"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if not 0.0 < self.norm_momentum < 1.0:
            raise ConfigurationError("norm_momentum must lie in (0, 1)")

    @property
    def num_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def num_linear(self) -> int:
        return len(self.layer_widths) - 1


@dataclass
class NormStats:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1

    def __post_init__(self):
        if np.any(self.running_var <= 0):
            raise ValueError("running_var must be strictly positive")
        if not 0.0 < self.momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")


def linear_names(i):
    return f"fc{i}.weight", f"fc{i}.bias"


def norm_names(i):
    return f"norm{i}.weight", f"norm{i}.bias", f"norm{i}.running_mean", f"norm{i}.running_var"


def init_model(spec: MlpSpec, rng: np.random.Generator) -> ParameterSet:
    """Xavier-uniform weights, zero biases, identity normalization."""
    layers = {}
    stats = []
    widths = spec.layer_widths
    for i in range(spec.num_linear):
        fan_in, fan_out = widths[i], widths[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w, b = linear_names(i)
        layers[w] = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers[b] = np.zeros(fan_out)
        if spec.use_norm_layer and i < spec.num_linear - 1:
            g, beta, rm, rv = norm_names(i)
            layers[g] = np.ones(fan_out)
            layers[beta] = np.zeros(fan_out)
            layers[rm] = np.zeros(fan_out)
            layers[rv] = np.ones(fan_out)
            stats += [rm, rv]
    return ParameterSet(layers, stats)


def norm_stats(model: ParameterSet, spec: MlpSpec, i: int) -> NormStats:
    _, _, rm, rv = norm_names(i)
    return NormStats(model[rm], model[rv], spec.norm_momentum)


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_backward(z, a, dout, kind):
    if kind == "relu":
        return dout * (z > 0)
    return dout * (1.0 - a * a)


def forward(model: ParameterSet, spec: MlpSpec, features, train=True):
    """Return ``(logits, cache)``.

    In ``train`` mode normalization layers standardize with the batch
    statistics; otherwise they use the running statistics.
    """
    h = np.asarray(features, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != spec.layer_widths[0]:
        raise ConfigurationError(
            f"batch has shape {h.shape}, expected (batch, {spec.layer_widths[0]})"
        )
    cache = {"input": h, "layers": [], "train": train}
    for i in range(spec.num_linear):
        wn, bn = linear_names(i)
        try:
            w, b = model[wn], model[bn]
        except KeyError as exc:
            raise ConfigurationError(f"model lacks layer {exc}") from None
        if w.shape != (spec.layer_widths[i + 1], spec.layer_widths[i]):
            raise ConfigurationError(f"{wn} has shape {w.shape}, spec expects different widths")
        z = h @ w.T + b
        rec = {"in": h, "z": z}
        if i < spec.num_linear - 1:
            if spec.use_norm_layer:
                g, beta, rm, rv = norm_names(i)
                if train:
                    mu = z.mean(axis=0)
                    var = z.var(axis=0)
                else:
                    mu, var = model[rm], model[rv]
                inv_std = 1.0 / np.sqrt(var + spec.norm_eps)
                xhat = (z - mu) * inv_std
                rec.update(mu=mu, var=var, inv_std=inv_std, xhat=xhat)
                zn = model[g] * xhat + model[beta]
            else:
                zn = z
            a = _activate(zn, spec.activation)
            rec.update(zn=zn, a=a)
            h = a
        else:
            h = z
        cache["layers"].append(rec)
    return h, cache


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and the softmax probabilities."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    loss = -log_probs[np.arange(len(labels)), labels].mean()
    return float(loss), np.exp(log_probs)


def _check_labels(labels, num_classes):
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise DataError("labels must be a 1-D integer array")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"labels must lie in [0, {num_classes})")
    return labels


def loss(model: ParameterSet, spec: MlpSpec, features, labels, train=True) -> float:
    labels = _check_labels(labels, spec.num_classes)
    logits, _ = forward(model, spec, features, train=train)
    return cross_entropy(logits, labels)[0]


def loss_and_grad(model: ParameterSet, spec: MlpSpec, features, labels):
    """Mean cross-entropy over the batch and its gradient.

    The gradient has the structure of ``model``; stat layers get zeros.
    Returns ``(loss, grad, cache)``; the cache carries batch statistics for
    :func:`update_norm_stats`.
    """
    labels = _check_labels(labels, spec.num_classes)
    logits, cache = forward(model, spec, features, train=True)
    value, probs = cross_entropy(logits, labels)
    n = len(labels)
    grads = {name: np.zeros_like(v) for name, v in model.items()}

    dz = probs
    dz[np.arange(n), labels] -= 1.0
    dz /= n
    for i in reversed(range(spec.num_linear)):
        rec = cache["layers"][i]
        if i < spec.num_linear - 1:
            dzn = _activate_backward(rec["zn"], rec["a"], dh, spec.activation)
            if spec.use_norm_layer:
                g, beta, _, _ = norm_names(i)
                xhat = rec["xhat"]
                grads[g] = (dzn * xhat).sum(axis=0)
                grads[beta] = dzn.sum(axis=0)
                dxhat = dzn * model[g]
                dz = rec["inv_std"] / n * (
                    n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
                )
            else:
                dz = dzn
        wn, bn = linear_names(i)
        grads[wn] = dz.T @ rec["in"]
        grads[bn] = dz.sum(axis=0)
        dh = dz @ model[wn]
    return value, model.with_layers(grads), cache


def update_norm_stats(model: ParameterSet, spec: MlpSpec, cache) -> ParameterSet:
    """Blend the batch statistics from a training forward pass into the running ones."""
    if not spec.use_norm_layer:
        return model
    layers = dict(model.layers)
    m = spec.norm_momentum
    for i in range(spec.num_linear - 1):
        rec = cache["layers"][i]
        _, _, rm, rv = norm_names(i)
        layers[rm] = (1.0 - m) * model[rm] + m * rec["mu"]
        layers[rv] = (1.0 - m) * model[rv] + m * rec["var"]
    return model.with_layers(layers)


def sgd_step(model: ParameterSet, grad: ParameterSet, lr: float) -> ParameterSet:
    model.check_compatible(grad)
    if not lr >= 0:
        raise ConfigurationError("learning rate must be non-negative")
    layers = dict(model.layers)
    for name in model.gradient_names:
        layers[name] = model[name] - lr * grad[name]
    return model.with_layers(layers)


def predict(model: ParameterSet, spec: MlpSpec, features) -> np.ndarray:
    logits, _ = forward(model, spec, features, train=False)
    return logits.argmax(axis=1)


def exact_sensitivity_oracle(model: ParameterSet, spec: MlpSpec, features, labels, index) -> float:
    """Loss change from setting one parameter to zero, by re-running the network.

    ``index`` is either a global flat index or ``(layer_name, flat_offset)``.
    The model is not modified: the zeroed value lives in a private copy of
    the one affected layer.
    """
    name, offset = model.locate(index)
    base = loss(model, spec, features, labels)
    layer = model[name].copy()
    layer.flat[offset] = 0.0
    layers = dict(model.layers)
    layers[name] = layer
    zeroed = loss(model.with_layers(layers), spec, features, labels)
    return abs(base - zeroed)
