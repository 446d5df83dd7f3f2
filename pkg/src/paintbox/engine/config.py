"""Layered engine configuration: defaults, file, environment, overrides.

Values resolve in that order (later wins).  The file is YAML (JSON is a
subset) with one section per component; environment variables spell the
same paths as ``PAINTBOX_<SECTION>_<FIELD>``; programmatic overrides use
dotted ``section.field`` keys.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from ..forest import ForestSettings
from ..propagation import PropagationSettings
from ..touch import TouchSettings


@dataclass(frozen=True)
class RenderConfig:
    width: int = 640
    height: int = 480
    fx: float = 525.0
    fy: float = 525.0
    near: float = 0.1
    far: float = 10.0
    overlay_alpha: float = 0.5
    median_filter: bool = False


@dataclass(frozen=True)
class SessionConfig:
    seed: int = 0
    training_quota: int = 128
    prediction_samples: int = 8192
    descriptor_cache_entries: int = 200000
    inspection_dir: str = "inspection_out"


@dataclass(frozen=True)
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    max_fps: float = 30.0


@dataclass(frozen=True)
class EngineConfig:
    render: RenderConfig = field(default_factory=RenderConfig)
    session: SessionConfig = field(default_factory=SessionConfig)
    server: ServerConfig = field(default_factory=ServerConfig)
    forest: ForestSettings = field(default_factory=ForestSettings)
    propagation: PropagationSettings = field(default_factory=PropagationSettings)
    touch: TouchSettings = field(default_factory=TouchSettings)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            section = getattr(self, f.name)
            out[f.name] = {g.name: getattr(section, g.name) for g in fields(section)}
        return out


def _coerce(raw, target_type):
    if isinstance(raw, str):
        if target_type is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"cannot parse boolean from {raw!r}")
        if target_type in (int, float, str):
            return target_type(raw)
    return raw


_SECTION_TYPES = {
    "render": RenderConfig,
    "session": SessionConfig,
    "server": ServerConfig,
    "forest": ForestSettings,
    "propagation": PropagationSettings,
    "touch": TouchSettings,
}


def _apply(config: EngineConfig, section: str, key: str, value) -> EngineConfig:
    if section not in _SECTION_TYPES:
        raise KeyError(f"unknown config section {section!r}")
    cls = _SECTION_TYPES[section]
    valid = {f.name: f.type for f in fields(cls)}
    if key not in valid:
        raise KeyError(f"unknown config key {section}.{key}")
    current = getattr(config, section)
    ftype = {f.name: f for f in fields(cls)}[key].type
    base_type = {"int": int, "float": float, "bool": bool, "str": str}.get(str(ftype))
    if base_type is None:
        sample = getattr(current, key)
        base_type = type(sample) if sample is not None else str
    coerced = _coerce(value, base_type)
    return replace(config, **{section: replace(current, **{key: coerced})})


def load_config(
    path: str | Path | None = None,
    *,
    env: dict | None = None,
    overrides: dict | None = None,
) -> EngineConfig:
    """Resolve configuration: defaults, then file, then env, then overrides."""
    config = EngineConfig()
    if path is not None:
        doc = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(doc, dict):
            raise ValueError("config file must contain a mapping")
        for section, body in doc.items():
            if not isinstance(body, dict):
                raise ValueError(f"config section {section!r} must be a mapping")
            for key, value in body.items():
                config = _apply(config, str(section), str(key), value)
    env = os.environ if env is None else env
    for name, value in env.items():
        if not name.startswith("PAINTBOX_"):
            continue
        parts = name[len("PAINTBOX_") :].lower().split("_", 1)
        if len(parts) != 2 or parts[0] not in _SECTION_TYPES:
            continue
        section, key = parts
        config = _apply(config, section, key, value)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        config = _apply(config, section, key, value)
    return config
