"""Experiment configuration: nested dataclasses with JSON round-trips and
dotted-path overrides for the CLI."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .completer import CompleterConfig
from .errors import ConfigError
from .kgc import KgcConfig, SCORERS
from .numerics import derive_seed

COMPLETION_MODES = ("maco_gen", "maco_all_gen", "random", "one")
FILTER_MODES = ("full", "train")


@dataclass
class DataConfig:
    """Where the graph and features come from.

    ``source="synth"`` generates a benchmark in memory; ``"files"`` loads a
    dataset directory (train/valid/test.txt, features.txt, optional
    mask.txt).
    """

    source: str = "synth"
    path: Optional[str] = None
    num_entities: int = 200
    num_relations: int = 5
    num_triples: int = 1500
    d_v: int = 32
    noise_level: float = 0.05

    def validate(self) -> None:
        if self.source not in ("synth", "files"):
            raise ConfigError(f"unknown data source {self.source!r}")
        if self.source == "files" and not self.path:
            raise ConfigError("data source 'files' requires a path")
        if self.source == "synth":
            if self.num_entities < 2 or self.num_relations < 1 or self.num_triples < 1:
                raise ConfigError("synthetic graph needs >= 2 entities, >= 1 relation, >= 1 triple")
            if self.d_v < 1:
                raise ConfigError(f"d_v must be positive, got {self.d_v}")
            if self.noise_level < 0:
                raise ConfigError(f"noise_level must be >= 0, got {self.noise_level}")


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    completer: CompleterConfig = field(default_factory=CompleterConfig)
    kgc: KgcConfig = field(default_factory=KgcConfig)
    missing_rate: float = 0.4
    completion_mode: str = "maco_gen"
    scorer: str = "ikrl_like"
    filter_mode: str = "full"
    output_dir: str = "runs/experiment"
    seed: int = 0

    def validate(self) -> None:
        self.data.validate()
        self.completer.validate()
        self.kgc.validate()
        if not 0.0 <= self.missing_rate <= 1.0:
            raise ConfigError(f"missing_rate must lie in [0, 1], got {self.missing_rate}")
        if self.completion_mode not in COMPLETION_MODES:
            raise ConfigError(
                f"unknown completion_mode {self.completion_mode!r}; choose from {COMPLETION_MODES}")
        if self.scorer not in SCORERS:
            raise ConfigError(f"unknown scorer {self.scorer!r}; choose from {SCORERS}")
        if self.filter_mode not in FILTER_MODES:
            raise ConfigError(f"unknown filter_mode {self.filter_mode!r}")


_SECTIONS = {"data": DataConfig, "completer": CompleterConfig, "kgc": KgcConfig}


def _fields(cls) -> set:
    return {f.name for f in dataclasses.fields(cls)}


def _section_from_dict(cls, payload: dict, context: str):
    unknown = set(payload) - _fields(cls)
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")
    return cls(**payload)


def config_from_dict(payload: dict) -> ExperimentConfig:
    payload = dict(payload)
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in payload:
            section = payload.pop(name)
            if not isinstance(section, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            kwargs[name] = _section_from_dict(cls, section, name)
    unknown = set(payload) - _fields(ExperimentConfig)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**kwargs, **payload)


def config_to_dict(config: ExperimentConfig) -> dict:
    return dataclasses.asdict(config)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid json: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: config must be a json object")
    return config_from_dict(payload)


def save_config(path, config: ExperimentConfig) -> None:
    Path(path).write_text(
        json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: ExperimentConfig, overrides: list) -> ExperimentConfig:
    """Apply ``section.key=value`` (or ``key=value``) assignments in place.

    Values parse as JSON when possible, otherwise stay strings; unknown
    paths raise ConfigError.
    """
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        value = _coerce(raw)
        parts = key.split(".")
        if len(parts) == 1:
            if parts[0] not in _fields(ExperimentConfig) or parts[0] in _SECTIONS:
                raise ConfigError(f"unknown config key {parts[0]!r}")
            setattr(config, parts[0], value)
        elif len(parts) == 2 and parts[0] in _SECTIONS:
            section = getattr(config, parts[0])
            if parts[1] not in _fields(type(section)):
                raise ConfigError(f"unknown config key {key!r}")
            setattr(section, parts[1], value)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return config


def resolve_config(config: ExperimentConfig) -> ExperimentConfig:
    """Fill derived fields: stage seeds and the completion strategy.

    Stage seeds left at None derive from the experiment seed, and
    ``completer.strategy`` follows ``completion_mode`` when it names one of
    the generator-backed modes.
    """
    if config.completer.seed is None:
        config.completer.seed = derive_seed(config.seed, "completer")
    if config.kgc.seed is None:
        config.kgc.seed = derive_seed(config.seed, "kgc")
    if config.completion_mode == "maco_gen":
        config.completer.strategy = "gen"
    elif config.completion_mode == "maco_all_gen":
        config.completer.strategy = "all_gen"
    config.validate()
    return config
