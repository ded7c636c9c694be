"""Application configuration: typed sections, JSON loading, strict keys.

The config file is a single JSON document. Unknown keys fail loading so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised for unreadable, ill-typed, or unknown-key config documents."""


@dataclass(slots=True)
class BackendSettings:
    mode: str = "mock"  # "mock" or "live"
    base_url: str = ""
    chat_model: str = ""
    embed_model: str = ""
    api_key_env: str = ""


@dataclass(slots=True)
class MockSettings:
    transcript_path: str | None = None
    embedding_table_path: str | None = None
    chat_fallback: str | None = None
    embed_dimension: int = 32


@dataclass(slots=True)
class MatcherSettings:
    m: int = 3
    t_matching: float = 0.6


@dataclass(slots=True)
class RetrieverSettings:
    k: int = 5


@dataclass(slots=True)
class MaskSettings:
    r: float = 0.0
    t: float = 0.6


@dataclass(slots=True)
class QuestioningSettings:
    count: int = 3
    rephrase: bool = False
    mask: MaskSettings = field(default_factory=MaskSettings)


@dataclass(slots=True)
class HierarchySettings:
    max_subcategories: int = 12
    max_categories: int = 6


@dataclass(slots=True)
class ClusteringSettings:
    threshold: float = 0.35


@dataclass(slots=True)
class EvalSettings:
    seed: int = 42


@dataclass(slots=True)
class EngineSettings:
    naive: bool = False  # use the no-KG baseline template


@dataclass(slots=True)
class PathsSettings:
    kg: str | None = None
    index: str | None = None
    templates_dir: str | None = None
    alias_table: str | None = None
    corpus: str | None = None


@dataclass(slots=True)
class ServiceSettings:
    host: str = "127.0.0.1"
    port: int = 8000
    static_dir: str | None = None
    snapshot_path: str | None = None


@dataclass(slots=True)
class AppConfig:
    backend: BackendSettings = field(default_factory=BackendSettings)
    mock: MockSettings = field(default_factory=MockSettings)
    matcher: MatcherSettings = field(default_factory=MatcherSettings)
    retriever: RetrieverSettings = field(default_factory=RetrieverSettings)
    questioning: QuestioningSettings = field(default_factory=QuestioningSettings)
    hierarchy: HierarchySettings = field(default_factory=HierarchySettings)
    clustering: ClusteringSettings = field(default_factory=ClusteringSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    engine: EngineSettings = field(default_factory=EngineSettings)
    paths: PathsSettings = field(default_factory=PathsSettings)
    service: ServiceSettings = field(default_factory=ServiceSettings)


def load_config(path: str | Path | None = None) -> AppConfig:
    """Load an AppConfig from a JSON file; None returns pure defaults."""
    if path is None:
        return AppConfig()
    raw = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    return _fill_dataclass(AppConfig, doc, prefix="")


def validate_config(cfg: AppConfig) -> list[str]:
    """Range checks shared by CLI and service startup."""
    problems: list[str] = []
    if cfg.backend.mode not in ("mock", "live"):
        problems.append(f"backend.mode must be 'mock' or 'live', got {cfg.backend.mode!r}")
    if cfg.backend.mode == "live" and not cfg.backend.base_url:
        problems.append("backend.mode is 'live' but backend.base_url is empty")
    if cfg.matcher.m < 1:
        problems.append("matcher.m must be >= 1")
    if not 0.0 < cfg.matcher.t_matching < 1.0:
        problems.append("matcher.t_matching must be in (0, 1)")
    if cfg.retriever.k < 1:
        problems.append("retriever.k must be >= 1")
    if cfg.questioning.count < 0:
        problems.append("questioning.count must be >= 0")
    if not 0.0 <= cfg.questioning.mask.r <= 1.0:
        problems.append("questioning.mask.r must be in [0, 1]")
    if not 0.0 < cfg.questioning.mask.t < 1.0:
        problems.append("questioning.mask.t must be in (0, 1)")
    if cfg.hierarchy.max_subcategories < 1 or cfg.hierarchy.max_categories < 1:
        problems.append("hierarchy topic limits must be >= 1")
    if not 0.0 < cfg.clustering.threshold < 2.0:
        problems.append("clustering.threshold must be in (0, 2)")
    if cfg.mock.embed_dimension < 2:
        problems.append("mock.embed_dimension must be >= 2")
    return problems


def _fill_dataclass(cls: type, doc: dict[str, Any], prefix: str) -> Any:
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        where = prefix or "top level"
        raise ConfigError(f"unknown config keys at {where}: {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, spec in fields.items():
        if name not in doc:
            continue
        value = doc[name]
        nested = _nested_type(spec)
        if nested is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {prefix}{name} must be an object")
            kwargs[name] = _fill_dataclass(nested, value, prefix=f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce_scalar(value, spec, prefix)
    return cls(**kwargs)


def _nested_type(spec: dataclasses.Field) -> type | None:
    default = spec.default_factory if spec.default_factory is not dataclasses.MISSING else None
    if default is not None and dataclasses.is_dataclass(default):
        return default  # type: ignore[return-value]
    return None


def _coerce_scalar(value: Any, spec: dataclasses.Field, prefix: str) -> Any:
    if isinstance(value, (dict, list)):
        raise ConfigError(f"config key {prefix}{spec.name} must be a scalar")
    # ints are acceptable where floats are expected (JSON has one number type)
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return value
    if isinstance(value, int) and "float" in str(spec.type):
        return float(value)
    return value
