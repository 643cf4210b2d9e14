"""Pipeline configuration: one JSON file, validated with key-path errors."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError

DEFAULT_FILTER_RULES = [
    {"name": "min_width", "field": "width", "op": "<", "threshold": 256, "action": "drop"},
    {"name": "min_height", "field": "height", "op": "<", "threshold": 256, "action": "drop"},
    {"name": "over_compression", "field": "compression_ratio", "op": ">", "threshold": 120, "action": "flag"},
    {"name": "low_entropy", "field": "border_variance", "op": "<", "threshold": 1e-4, "action": "flag"},
]


@dataclass
class ProfilerConfig:
    border_width: int = 4
    bpp_quality: int = 75
    filter_rules: list = field(default_factory=lambda: [dict(r) for r in DEFAULT_FILTER_RULES])


@dataclass
class VectorConfig:
    k: int = 100
    tau_edge: float = 0.0
    gamma: float = 1.0
    seed: int = 0
    restarts: int = 12
    dedup_strategy: str = "quality"
    score_key: str = "aesthetic"
    modality: str = "image"


@dataclass
class KnowledgeConfig:
    damping: float = 0.85
    tol: float = 1e-9
    max_iter: int = 200
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    decay: float = 0.5
    epsilon: float = 1.0
    default_weight: float = 1.0
    prune_quantile: float | None = None
    manual_weights: dict = field(default_factory=dict)
    taxonomy_branching: int = 8
    taxonomy_depth_cap: int = 6


@dataclass
class SamplingConfig:
    n: int = 10
    seed: int = 0
    mix: dict = field(default_factory=lambda: {"t2i": 0.8, "i2i": 0.2})


@dataclass
class PairsConfig:
    tau: float = 0.85
    max_pairs: int = 20


@dataclass
class PlannerConfig:
    spatial_factor: int = 16
    text_token_estimate: int = 128
    token_budget: int = 65536
    rho: float = 1.25
    seed: int = 0
    target_area: int = 1024 * 1024
    granularity: int = 32


@dataclass
class CurationConfig:
    lease_duration: float = 600.0
    alpha: float = 0.5
    auto_approve: bool = False
    thresholds: dict = field(default_factory=dict)
    propose_n: int = 10
    propose_seed: int = 0


@dataclass
class PipelineConfig:
    data_dir: str | None = None
    profiler: ProfilerConfig = field(default_factory=ProfilerConfig)
    vector: VectorConfig = field(default_factory=VectorConfig)
    knowledge: KnowledgeConfig = field(default_factory=KnowledgeConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    pairs: PairsConfig = field(default_factory=PairsConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    curation: CurationConfig = field(default_factory=CurationConfig)


_SECTIONS = {
    "profiler": ProfilerConfig,
    "vector": VectorConfig,
    "knowledge": KnowledgeConfig,
    "sampling": SamplingConfig,
    "pairs": PairsConfig,
    "planner": PlannerConfig,
    "curation": CurationConfig,
}

_COERCIONS = {int: (int,), float: (int, float), str: (str,), bool: (bool,), dict: (dict,), list: (list,)}


def _check_type(path: str, value: Any, annotation: Any) -> Any:
    # annotations on the config dataclasses are simple: scalars, dicts, lists,
    # and "x | None" unions
    text = str(annotation)
    optional = "None" in text
    if value is None:
        if optional:
            return None
        raise ConfigError("config", f"{path}: must not be null")
    if "int" in text and "point" not in text:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("config", f"{path}: expected integer, got {value!r}")
        return value
    if "float" in text:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("config", f"{path}: expected number, got {value!r}")
        return float(value)
    if "bool" in text:
        if not isinstance(value, bool):
            raise ConfigError("config", f"{path}: expected boolean, got {value!r}")
        return value
    if "str" in text:
        if not isinstance(value, str):
            raise ConfigError("config", f"{path}: expected string, got {value!r}")
        return value
    if "dict" in text:
        if not isinstance(value, dict):
            raise ConfigError("config", f"{path}: expected object, got {value!r}")
        return value
    if "list" in text:
        if not isinstance(value, list):
            raise ConfigError("config", f"{path}: expected array, got {value!r}")
        return value
    return value


def _build_section(name: str, cls, data: Any):
    if not isinstance(data, dict):
        raise ConfigError("config", f"{name}: expected object, got {data!r}")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError("config", f"{name}.{key}: unknown key")
        kwargs[key] = _check_type(f"{name}.{key}", value, known[key].type)
    return cls(**kwargs)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> PipelineConfig:
    """Load and validate; any bad value fails with its full key path."""
    data: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError("config", f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except ValueError as e:
            raise ConfigError("config", f"config is not valid JSON: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError("config", "config root must be an object")
    if overrides:
        data = {**data, **overrides}
    cfg = PipelineConfig()
    for key, value in data.items():
        if key == "data_dir":
            cfg.data_dir = _check_type("data_dir", value, "str | None")
        elif key in _SECTIONS:
            setattr(cfg, key, _build_section(key, _SECTIONS[key], value))
        else:
            raise ConfigError("config", f"{key}: unknown section")
    return cfg
