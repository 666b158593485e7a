"""Flat ``key = value`` configuration files mapped onto dataclass fields."""

from __future__ import annotations

import dataclasses
from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def read_file(path) -> dict[str, str]:
    try:
        return parse_text(Path(path).read_text())
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def coerce(value: str, like):
    if isinstance(like, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    try:
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    return value


def resolve(values: dict[str, str], schema: dict[str, object]) -> dict[str, object]:
    """Overlay string ``values`` on typed ``schema`` defaults; unknown keys are errors."""
    unknown = sorted(set(values) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    out = dict(schema)
    for k, v in values.items():
        out[k] = coerce(v, schema[k]) if schema[k] is not None else v
    return out


def defaults_of(cls) -> dict[str, object]:
    return {f.name: f.default for f in dataclasses.fields(cls)}


def build(cls, resolved: dict[str, object]):
    names = {f.name for f in dataclasses.fields(cls)}
    try:
        return cls(**{k: v for k, v in resolved.items() if k in names})
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{cls.__name__}: {err}") from err


def format_config(resolved: dict[str, object]) -> str:
    lines = []
    for k in sorted(resolved):
        v = resolved[k]
        lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
