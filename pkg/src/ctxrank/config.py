"""Application configuration: one JSON document plus dotted-path overrides."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidConfig
from .model import TrainConfig
from .reranker import RerankParams
from .simgen import WorldConfig

CONFIG_ENV = "CTXRANK_CONFIG"


@dataclass(frozen=True)
class PathsConfig:
    workdir: str = "."
    world: str = "world"
    logs: str = "logs"
    models: str = "models"
    reports: str = "reports"

    def resolve(self, name: str) -> Path:
        return Path(self.workdir) / getattr(self, name)


@dataclass(frozen=True)
class EvalConfig:
    n_buckets: int = 40
    min_bucket_count: int = 500
    compare_sessions: int = 1000
    mmr_lambda: float = 0.5
    figures: bool = True

    def __post_init__(self):
        if self.n_buckets < 1:
            raise InvalidConfig("eval.n_buckets must be >= 1")
        if self.compare_sessions < 0:
            raise InvalidConfig("eval.compare_sessions must be >= 0")


@dataclass(frozen=True)
class ServiceConfig:
    session_idle_limit: int = 1000
    objective_task: int = 0

    def __post_init__(self):
        if self.session_idle_limit < 1:
            raise InvalidConfig("service.session_idle_limit must be >= 1")


@dataclass(frozen=True)
class AppConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    rerank: RerankParams = field(default_factory=RerankParams)
    eval: EvalConfig = field(default_factory=EvalConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "paths": PathsConfig,
    "world": WorldConfig,
    "train": TrainConfig,
    "rerank": RerankParams,
    "eval": EvalConfig,
    "service": ServiceConfig,
}


# Short names accepted in config files and overrides.
_ALIASES = {"rerank": {"w": "window", "p": "page_size", "k": "context_depth"}}


def _build(cls, values: dict, section: str):
    aliases = _ALIASES.get(section, {})
    for short, name in aliases.items():
        if short in values:
            if name in values:
                raise InvalidConfig(f"[{section}]: both {short!r} and {name!r} given")
            values = {**{k: v for k, v in values.items() if k != short}, name: values[short]}
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise InvalidConfig(f"unknown keys in [{section}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise InvalidConfig(f"[{section}]: {exc}") from exc


def config_from_dict(doc: dict) -> AppConfig:
    if not isinstance(doc, dict):
        raise InvalidConfig("config must be a JSON object")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise InvalidConfig(f"unknown config sections: {', '.join(sorted(unknown))}")
    sections = {}
    for name, cls in _SECTIONS.items():
        values = doc.get(name, {})
        if not isinstance(values, dict):
            raise InvalidConfig(f"section {name!r} must be an object")
        sections[name] = _build(cls, values, name)
    return AppConfig(**sections)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
    doc = json.loads(json.dumps(doc))
    for item in overrides:
        key, sep, value = item.partition("=")
        key = key.lstrip("-")
        if not sep or "." not in key:
            raise InvalidConfig(f"override {item!r} is not of the form section.key=value")
        section, name = key.split(".", 1)
        name = _ALIASES.get(section, {}).get(name, name)
        doc.setdefault(section, {})[name] = _parse_value(value)
    return doc


def load_config(path=None, overrides=()) -> AppConfig:
    """Read the config file (argument, then $CTXRANK_CONFIG, else defaults)."""
    path = path or os.environ.get(CONFIG_ENV)
    doc = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"config {path} is not valid JSON: {exc.msg}") from exc
    return config_from_dict(apply_overrides(doc, overrides))
