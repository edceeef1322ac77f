"""Run configuration: a single YAML key-value tree per run.

The tree mirrors the dataclass structure below.  Unknown keys are
rejected.  Command-line overrides (--set KEY=VALUE) address leaves either
by dotted path (train.loss.lambda_attentive) or, when unambiguous, by bare
leaf name (lambda_vat).  The fully resolved configuration is echoed into
the metrics log header so every run is reproducible from its log alone.
"""

from __future__ import annotations

import json
import typing
from dataclasses import dataclass, field, fields, is_dataclass

import yaml

from .data import SyntheticConfig
from .errors import ConfigError
from .losses import LossWeights
from .network import NetworkConfig
from .trainer import TrainConfig
from .vat import VatConfig


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = "data"
    out_dir: str = "out"


@dataclass(frozen=True)
class RunConfig:
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> "RunConfig":
        self.synthetic.validate()
        self.network.validate()
        self.train.validate()
        return self


def _coerce(value, target_type, path: str):
    origin = typing.get_origin(target_type)
    if is_dataclass(target_type):
        if not isinstance(value, dict):
            raise ConfigError(f"{path} must be a mapping")
        return _build(target_type, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path} must be a list")
        item_type = typing.get_args(target_type)[0]
        return tuple(_coerce(v, item_type, f"{path}[{i}]") for i, v in enumerate(value))
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be a boolean, got {value!r}")
        return value
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path} must be an integer, got {value!r}")
        return int(value)
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number, got {value!r}")
        return float(value)
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path} must be a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported config field type {target_type}")


def _build(cls, data: dict, path: str = ""):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown config key '{where}{unknown[0]}'")
    kwargs = {}
    hints = typing.get_type_hints(cls)
    for name, f in known.items():
        if name in data:
            child = f"{path}.{name}" if path else name
            kwargs[name] = _coerce(data[name], hints[name], child)
    return cls(**kwargs)


def _to_plain(obj):
    if is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return _build(RunConfig, data).validate()


def config_to_dict(cfg: RunConfig) -> dict:
    return _to_plain(cfg)


def load_config(path=None) -> RunConfig:
    """Config from a YAML file, or all defaults when path is None."""
    if path is None:
        return RunConfig().validate()
    with open(path) as f:
        data = yaml.safe_load(f)
    if data is None:
        data = {}
    return config_from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True, default_flow_style=False)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as f:
        f.write(dump_config(cfg))


def resolved_json(cfg: RunConfig) -> str:
    """One-line canonical form for embedding in metric log headers."""
    return json.dumps(config_to_dict(cfg), sort_keys=True)


def _find_paths(tree: dict, leaf: str, prefix: tuple[str, ...] = ()) -> list[tuple[str, ...]]:
    hits = []
    for key, value in tree.items():
        here = prefix + (key,)
        if key == leaf:
            hits.append(here)
        if isinstance(value, dict):
            hits.extend(_find_paths(value, leaf, here))
    return hits


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply --set KEY=VALUE pairs; values are parsed as YAML scalars."""
    tree = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not KEY=VALUE")
        key, raw = item.split("=", 1)
        key = key.strip()
        if "." in key:
            parts = tuple(key.split("."))
        else:
            hits = _find_paths(tree, key)
            if not hits:
                raise ConfigError(f"unknown config key '{key}'")
            if len(hits) > 1:
                names = ", ".join(".".join(h) for h in hits)
                raise ConfigError(f"ambiguous config key '{key}' (matches {names})")
            parts = hits[0]
        node = tree
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown config key '{key}'")
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"unknown config key '{key}'")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse value for '{key}': {e}") from None
        node[parts[-1]] = value
    return config_from_dict(tree)
