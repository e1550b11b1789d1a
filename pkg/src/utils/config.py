"""
Configuration loading: defaults from src/config/config.yaml, overridden by a flat
key-value file passed with --config, overridden by command-line flags.
"""
import os
import types
from dataclasses import fields
from pathlib import Path
from typing import Any, Union, get_args, get_origin

import yaml
from dotenv import load_dotenv

from src.utils.errors import ConfigError, SnowHazardError

load_dotenv()

# Settings whose value is itself a small mapping; every other override value must be a scalar or a list.
MAPPING_SETTINGS = frozenset({"tiles"})

# Allow running from project root or from src/utils
_PROJECT_ROOT = Path(os.getenv("PROJECT_ROOT") or Path(__file__).resolve().parents[2])


def project_root() -> Path:
    return Path(os.getenv("PROJECT_ROOT") or _PROJECT_ROOT)


def load_config(config_path: str | Path | None = None) -> dict:
    """Read the defaults file (or an explicit full config file)."""
    path = Path(config_path) if config_path else project_root() / "src" / "config" / "config.yaml"
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def load_overrides(path: str | Path | None) -> dict:
    """Read a flat `key: value` override file.

    Nested mappings are rejected except for the settings in MAPPING_SETTINGS,
    e.g. `tiles: {rows: 2, cols: 4}`.
    """
    if not path:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Override file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"Override file must hold key: value pairs: {path}")
    overrides = {str(k).replace("-", "_"): v for k, v in data.items()}
    for key, value in overrides.items():
        if isinstance(value, dict) and key not in MAPPING_SETTINGS:
            raise ConfigError(f"Override file must be flat; '{key}' is a mapping")
    return overrides


def resolve_section(
    config: dict,
    section: str,
    file_overrides: dict | None = None,
    flag_overrides: dict | None = None,
) -> dict[str, Any]:
    """Flags override the file, the file overrides the defaults section.

    Flag values of None mean "not given" and are skipped.
    """
    resolved = dict(config.get(section) or {})
    for key, value in (file_overrides or {}).items():
        resolved[key] = value
    for key, value in (flag_overrides or {}).items():
        if value is not None:
            resolved[key] = value
    return resolved


def runtime_workers(config: dict) -> int:
    """Worker-pool size; SNOW_HAZARD_WORKERS in the environment wins over the file."""
    env = os.getenv("SNOW_HAZARD_WORKERS")
    raw = env if env else (config.get("runtime") or {}).get("workers", 1)
    try:
        workers = _coerce(int, raw)
    except (TypeError, ValueError) as exc:
        source = "SNOW_HAZARD_WORKERS" if env else "runtime.workers"
        raise ConfigError(f"{source} must be an integer, got {raw!r}") from exc
    return max(1, workers or 1)


_COERCE = {int: int, float: float, str: str}


def _optional_inner(annotation):
    """`T | None` -> T; anything else is returned unchanged."""
    if get_origin(annotation) in (Union, types.UnionType):
        inner = [a for a in get_args(annotation) if a is not type(None)]
        if len(inner) == 1:
            return inner[0]
    return annotation


def _coerce(annotation, value):
    if value is None:
        return None
    annotation = _optional_inner(annotation)
    if annotation is bool:
        if isinstance(value, str):
            lowered = value.strip().lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {value!r}")
            return lowered in ("true", "1", "yes")
        return bool(value)
    if annotation in _COERCE:
        if annotation is int and isinstance(value, float) and not value.is_integer():
            raise ValueError(f"not an integer: {value!r}")
        return _COERCE[annotation](value)
    return value


def build_dataclass(cls, values: dict | None, section: str):
    """Instantiate a config dataclass from a loose mapping (YAML or flags).

    Unknown keys and uncoercible values raise ConfigError; the instance's
    `validate()` runs before it is returned.
    """
    values = dict(values or {})
    declared = {f.name: f.type for f in fields(cls)}
    unknown = sorted(set(values) - set(declared))
    if unknown:
        raise ConfigError(f"unknown {section} settings: {unknown}")
    try:
        kwargs = {key: _coerce(declared[key], value) for key, value in values.items()}
        return cls(**kwargs).validate()
    except SnowHazardError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid {section} setting: {exc}") from exc
