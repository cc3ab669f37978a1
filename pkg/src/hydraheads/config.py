"""Declarative run configuration: one TOML document plus ``section.key=value`` overrides."""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from hydraheads.finetune import FinetuneConfig
from hydraheads.pretrain import PretrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSection:
    d_model: int = 64
    n_heads: int = 4
    n_body_layers: int = 2
    d_ff: int = 256
    max_len: int = 64


@dataclass(frozen=True)
class VocabSection:
    min_freq: int = 2


@dataclass(frozen=True)
class TaskSection:
    kind: str = "classification"
    value_range: tuple[float, float] | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    model: ModelSection = field(default_factory=ModelSection)
    vocab: VocabSection = field(default_factory=VocabSection)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    task: TaskSection = field(default_factory=TaskSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


_SECTIONS = {"model": ModelSection, "vocab": VocabSection, "pretrain": PretrainConfig,
             "finetune": FinetuneConfig, "task": TaskSection}


def _parse_value(raw: str) -> Any:
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_overrides(doc: dict, overrides: Sequence[str]) -> dict:
    doc = {k: dict(v) if isinstance(v, dict) else v for k, v in doc.items()}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) == 1:
            doc[parts[0]] = _parse_value(raw)
        elif len(parts) == 2:
            doc.setdefault(parts[0], {})
            if not isinstance(doc[parts[0]], dict):
                raise ConfigError(f"{parts[0]!r} is not a section")
            doc[parts[0]][parts[1]] = _parse_value(raw)
        else:
            raise ConfigError(f"override key {key!r} is nested too deeply")
    return doc


def from_dict(doc: dict) -> RunConfig:
    """Build a RunConfig, rejecting unknown keys. Phase seeds default to the top-level seed."""
    known_top = {"seed", *_SECTIONS}
    for key in doc:
        if key not in known_top:
            raise ConfigError(f"unknown config key {key!r}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    built: dict[str, Any] = {"seed": seed}
    for name, cls in _SECTIONS.items():
        section = doc.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"{name!r} must be a table")
        allowed = {f.name for f in fields(cls)}
        for key in section:
            if key not in allowed:
                raise ConfigError(f"unknown config key '{name}.{key}'")
        values = dict(section)
        if "seed" in allowed:
            values.setdefault("seed", seed)
        if name == "task" and values.get("value_range") is not None:
            values["value_range"] = tuple(values["value_range"])
        try:
            built[name] = cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}] {exc}") from None
    return RunConfig(**built)


def load_config(path: str | Path | None, overrides: Sequence[str] = ()) -> RunConfig:
    doc: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return from_dict(apply_overrides(doc, overrides))
