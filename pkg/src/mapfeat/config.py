"""Run configuration loading with strict validation.

A run config is one JSON file with a section per pipeline stage. Unknown
keys anywhere are errors so a config always means what it says.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from .losses import LossConfig
from .scene import SceneConfig
from .trainer import TrainConfig

__all__ = [
    "CompareOptions",
    "ConfigError",
    "EvaluateOptions",
    "LandmarkOptions",
    "RecoverOptions",
    "RunConfig",
    "load_config",
    "merge_overrides",
    "parse_config",
]


class ConfigError(ValueError):
    """Raised for unreadable, unknown-key, or invalid-value configs."""


@dataclass(frozen=True)
class LandmarkOptions:
    method: str = "greedy"
    count: int = 20
    r_lm: float = 2.0
    seed: int = 0
    conditions: Optional[tuple] = None

    def __post_init__(self):
        if self.method not in ("greedy", "threshold"):
            raise ValueError("landmark method must be 'greedy' or 'threshold'")
        if self.count < 1:
            raise ValueError("landmark count must be at least 1")
        if not self.r_lm > 0:
            raise ValueError("r_lm must be positive")


@dataclass(frozen=True)
class EvaluateOptions:
    query_conditions: Optional[tuple] = None
    tolerances: Optional[tuple] = None
    curve_points: int = 25

    def __post_init__(self):
        if self.curve_points < 2:
            raise ValueError("curve_points must be at least 2")
        if self.tolerances is not None and len(self.tolerances) == 0:
            raise ValueError("tolerances must be non-empty when given")


@dataclass(frozen=True)
class RecoverOptions:
    query_conditions: Optional[tuple] = None
    lam: Optional[float] = None
    completion_iters: int = 2000
    completion_tol: float = 1e-10
    smacof_iters: int = 300
    smacof_tol: float = 1e-9
    with_scale: bool = True

    def __post_init__(self):
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.completion_iters < 1 or self.smacof_iters < 1:
            raise ValueError("iteration limits must be at least 1")


@dataclass(frozen=True)
class CompareOptions:
    label_a: str = "a"
    label_b: str = "b"
    b_overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    landmarks: LandmarkOptions = field(default_factory=LandmarkOptions)
    evaluate: EvaluateOptions = field(default_factory=EvaluateOptions)
    recover: RecoverOptions = field(default_factory=RecoverOptions)
    compare: CompareOptions = field(default_factory=CompareOptions)


_NESTED = {LossConfig, SceneConfig, TrainConfig}


def _build(cls, data, path: str):
    """Construct a dataclass from a dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    spec = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in spec:
            raise ConfigError(f"{path}.{key}: unknown key")
        f = spec[key]
        if f.type in ("LossConfig",) or f.name == "loss":
            kwargs[key] = _build(LossConfig, value, f"{path}.{key}")
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        elif isinstance(value, dict) and f.name != "b_overrides":
            raise ConfigError(f"{path}.{key}: unexpected nested object")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_config(raw: dict) -> RunConfig:
    """Validate a raw config dict into a RunConfig."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    sections = {
        "scene": SceneConfig,
        "train": TrainConfig,
        "landmarks": LandmarkOptions,
        "evaluate": EvaluateOptions,
        "recover": RecoverOptions,
        "compare": CompareOptions,
    }
    kwargs = {}
    for key, value in raw.items():
        if key not in sections:
            raise ConfigError(f"{key}: unknown section")
        kwargs[key] = _build(sections[key], value, key)
    return RunConfig(**kwargs)


def load_config(path):
    """Read and validate a JSON run config; returns (raw dict, RunConfig)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return raw, parse_config(raw)


def merge_overrides(raw: dict, overrides: dict) -> dict:
    """Deep-merge override values onto a raw config dict."""
    merged = dict(raw)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_overrides(merged[key], value)
        else:
            merged[key] = value
    return merged
