"""Nested dataclass configs addressed by dotted keys.

``rotation.epsilon_r=0.02`` sets ``config.rotation.epsilon_r``.  Values given
as strings are coerced to the type of the current value, so the same keys
work from JSON files and from ``--set`` command-line overrides.
"""

from __future__ import annotations

import dataclasses
import json
from typing import Any, Mapping

from .exceptions import SatCMError
from .mapping import MapBuilderConfig
from .pipeline import PipelineConfig


class ConfigError(SatCMError, ValueError):
    """Unknown key or uncoercible value."""


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def flatten(d: Mapping, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(value, current, key):
    if not isinstance(value, str):
        if isinstance(current, tuple) and isinstance(value, (list, tuple)):
            return tuple(value)
        if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        return value
    text = value.strip()
    if text.lower() in ("none", "null"):
        return None
    try:
        if isinstance(current, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key}={value!r}") from exc
    return text


def set_key(cfg, key: str, value):
    """Copy of ``cfg`` with the dotted ``key`` replaced."""
    head, _, rest = key.partition(".")
    names = {f.name for f in dataclasses.fields(cfg)}
    if head not in names:
        raise ConfigError(f"unknown config key {key!r}")
    current = getattr(cfg, head)
    if rest:
        if not dataclasses.is_dataclass(current):
            raise ConfigError(f"{head!r} has no sub-keys")
        return dataclasses.replace(cfg, **{head: set_key(current, rest, value)})
    if dataclasses.is_dataclass(current):
        raise ConfigError(f"{key!r} is a section, not a value")
    try:
        return dataclasses.replace(cfg, **{head: _coerce(value, current, key)})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for {key}: {exc}") from exc


def apply(cfg, overrides: Mapping[str, Any]):
    for key, value in flatten(overrides).items():
        cfg = set_key(cfg, key, value)
    return cfg


def parse_override(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like key=value, got {text!r}")
    return key.strip(), value


def load(path, base=None):
    """Read a JSON config (nested or dotted keys) on top of ``base``."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return apply(base if base is not None else PipelineConfig(), data)


def pipeline_config(path=None, overrides=()) -> PipelineConfig:
    cfg = load(path) if path else PipelineConfig()
    for text in overrides:
        cfg = set_key(cfg, *parse_override(text))
    return cfg


def map_builder_config(path=None, overrides=()) -> MapBuilderConfig:
    cfg = load(path, MapBuilderConfig()) if path else MapBuilderConfig()
    for text in overrides:
        cfg = set_key(cfg, *parse_override(text))
    return cfg
