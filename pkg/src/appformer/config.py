"""
Experiment configuration.

A config file is one TOML document with a few top-level keys and one table
per stage::

    seed = 0
    protocol = "paulci"

    [paths]
    out_dir = "runs/default"

    [clustering]
    algorithm = "kmodes"
    k = 5

    [model]
    d_model = 128

Every key not listed in the dataclasses below is rejected. ``--set`` style
overrides use dotted names (``model.d_model=64``) and are parsed as TOML
values, falling back to a bare string.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import tomli

from .clustering import ALGORITHMS
from .data import SynthConfig
from .errors import ConfigError
from .model import ModelConfig, TrainConfig
from .preprocess import PROTOCOLS

OUT_DIR_ENV = "APP_OUT_DIR"


@dataclass(frozen=True)
class PathsConfig:
    out_dir: str = "runs/default"
    # empty means "use the synth stage output under out_dir"
    records: str = ""
    poi: str = ""


@dataclass(frozen=True)
class ClusteringConfig:
    algorithm: str = "kmodes"
    k: int = 5

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"clustering.algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.k < 0:
            raise ConfigError("clustering.k must be >= 0 (0 disables clustering)")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    protocol: str = "paulci"
    paths: PathsConfig = field(default_factory=PathsConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")

    @property
    def out_dir(self) -> Path:
        return Path(self.paths.out_dir)

    def stage_seeds(self) -> dict[str, int]:
        """Independent seeds for each random stage, all derived from ``seed``."""
        children = np.random.SeedSequence(self.seed).spawn(3)
        names = ("cluster", "init", "train")
        return {n: int(c.generate_state(1, dtype=np.uint32)[0]) for n, c in zip(names, children)}

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_SECTIONS = {
    "paths": PathsConfig,
    "synth": SynthConfig,
    "clustering": ClusteringConfig,
    "model": ModelConfig,
    "train": TrainConfig,
}
_TOP_LEVEL = ("seed", "protocol")


def _build(cls, values: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key {where}.{unknown[0]}; allowed: {sorted(known)}")
    default = cls()
    out = {}
    for name, value in values.items():
        expect = type(getattr(default, name))
        if expect is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, expect) or (expect is int and isinstance(value, bool)):
            raise ConfigError(f"{where}.{name} must be {expect.__name__}, got {value!r}")
        out[name] = value
    return replace(default, **out)


def from_dict(doc: dict) -> ExperimentConfig:
    unknown = sorted(set(doc) - set(_TOP_LEVEL) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    kwargs = {}
    for key in _TOP_LEVEL:
        if key in doc:
            kwargs[key] = doc[key]
    if "seed" in kwargs and (not isinstance(kwargs["seed"], int) or isinstance(kwargs["seed"], bool)):
        raise ConfigError(f"seed must be an integer, got {kwargs['seed']!r}")
    for name, cls in _SECTIONS.items():
        section = doc.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"{name} must be a table")
        kwargs[name] = _build(cls, section, name)
    return ExperimentConfig(**kwargs)


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = tomli.loads(f"v = {raw.strip()}")["v"]
    except tomli.TOMLDecodeError:
        value = raw.strip()
    return key.split("."), value


def apply_overrides(doc: dict, overrides) -> dict:
    doc = {k: dict(v) if isinstance(v, dict) else v for k, v in doc.items()}
    for text in overrides or ():
        path, value = parse_override(text)
        if len(path) == 1:
            doc[path[0]] = value
        elif len(path) == 2:
            doc.setdefault(path[0], {})
            if not isinstance(doc[path[0]], dict):
                raise ConfigError(f"{path[0]} is not a table")
            doc[path[0]][path[1]] = value
        else:
            raise ConfigError(f"override key {'.'.join(path)!r} is nested too deeply")
    return doc


def load_config(path=None, overrides=(), env=None) -> ExperimentConfig:
    """Read a TOML file (or start from defaults), apply overrides, then ``APP_OUT_DIR``."""
    env = os.environ if env is None else env
    doc: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = tomli.loads(path.read_text(encoding="utf-8"))
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    doc = apply_overrides(doc, overrides)
    if env.get(OUT_DIR_ENV):
        doc = apply_overrides(doc, [f'paths.out_dir="{env[OUT_DIR_ENV]}"'])
    return from_dict(doc)


def dump_toml(cfg: ExperimentConfig) -> str:
    """Serialise a config back to TOML; ``load_config`` round-trips it."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return json.dumps(v)
        return repr(v)

    d = cfg.to_dict()
    lines = [f"{k} = {fmt(d[k])}" for k in _TOP_LEVEL]
    for name in _SECTIONS:
        lines.append("")
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {fmt(v)}" for k, v in d[name].items())
    return "\n".join(lines) + "\n"
