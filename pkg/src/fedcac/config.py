"""TOML experiment files and ``--set key=value`` overrides."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import PartitionSpec
from .errors import ConfigurationError
from .nn import MlpSpec
from .orchestrator import DataSpec, RunConfig


@dataclass
class ProbeSpec:
    client_a: int = 0
    client_b: int = 1
    # client whose sensitivity map the heatmap probe exports
    client: int = 0
    # empty means the last linear layer's weight matrix
    layer: str = ""
    # angles: make client_b an exact twin of client_a;
    # overlap_study: twins instead of independent same-distribution pairs
    duplicate: bool = False


@dataclass
class Experiment:
    run: RunConfig = field(default_factory=RunConfig)
    probe: ProbeSpec = field(default_factory=ProbeSpec)
    out: str = "out"

    def to_dict(self) -> dict:
        d = self.run.to_dict()
        d["probe"] = dataclasses.asdict(self.probe)
        d["out"] = self.out
        return d


_SECTIONS = {"data": DataSpec, "partition": PartitionSpec, "model": MlpSpec, "probe": ProbeSpec}


def _fields(cls):
    return {f.name for f in dataclasses.fields(cls)}


def _build(cls, values: dict, where: str):
    unknown = set(values) - _fields(cls)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    return cls(**values)


def experiment_from_dict(raw: dict) -> Experiment:
    raw = dict(raw)
    sections = {}
    for name, cls in _SECTIONS.items():
        value = raw.pop(name, {})
        if not isinstance(value, dict):
            raise ConfigurationError(f"[{name}] must be a table")
        sections[name] = value
    out = raw.pop("out", "out")
    top_known = _fields(RunConfig) - set(_SECTIONS)
    unknown = set(raw) - top_known
    if unknown:
        raise ConfigurationError(f"unknown key(s): {', '.join(sorted(unknown))}")
    if "layer_widths" in sections["model"]:
        sections["model"]["layer_widths"] = tuple(sections["model"]["layer_widths"])
    try:
        data = _build(DataSpec, sections["data"], "[data]")
        part = _build(PartitionSpec, sections["partition"], "[partition]")
        if "model" in sections and sections["model"]:
            model = _build(MlpSpec, sections["model"], "[model]")
        else:
            model = MlpSpec((data.dims, 64, data.num_classes))
        run = RunConfig(data=data, partition=part, model=model, **raw)
        probe = _build(ProbeSpec, sections["probe"], "[probe]")
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None
    return Experiment(run, probe, str(out))


def parse_value(text: str):
    """Interpret an override value with TOML syntax, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    raw = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) > 2:
            raise ConfigurationError(f"override key {key!r} nests too deeply")
        target = raw
        if len(parts) == 2:
            target = raw.setdefault(parts[0], {})
            if not isinstance(target, dict):
                raise ConfigurationError(f"{parts[0]} is not a section")
        target[parts[-1]] = parse_value(text.strip())
    return raw


def load_raw(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from None


def load_experiment(path, overrides=()) -> Experiment:
    return experiment_from_dict(apply_overrides(load_raw(path), overrides))
