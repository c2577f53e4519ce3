"""Configuration: defaults, overridden by the YAML file, then env vars, then CLI flags."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from archivefs.client import DEFAULT_API_URL

ENV_API_URL = "ARCHIVEFS_API_URL"
ENV_CACHE_DIR = "ARCHIVEFS_CACHE_DIR"
ENV_CONFIG = "ARCHIVEFS_CONFIG"


class ConfigError(ValueError):
    pass


def _xdg(var: str, fallback: str) -> Path:
    base = os.environ.get(var)
    return Path(base) if base else Path.home() / fallback


def default_config_path() -> Path:
    return _xdg("XDG_CONFIG_HOME", ".config") / "archivefs" / "config.yml"


def default_cache_dir() -> Path:
    return _xdg("XDG_CACHE_HOME", ".cache") / "archivefs"


@dataclass
class Config:
    api_base_url: str = DEFAULT_API_URL
    auth_token: str | None = None
    cache_dir: Path = field(default_factory=default_cache_dir)
    direntry_capacity: int = 10_000
    blob_size_limit: int = 64 * 1024 * 1024
    retries: int = 3
    connect_timeout: float = 10.0
    read_timeout: float = 60.0
    foreground: bool = False
    debug: bool = False

    @property
    def timeouts(self) -> tuple[float, float]:
        return self.connect_timeout, self.read_timeout

    def merged(self, values: Mapping[str, Any]) -> Config:
        """Copy with ``values`` applied; ``None`` values are ignored."""
        known = {f.name: f for f in dataclasses.fields(self)}
        updates = {}
        for key, value in values.items():
            if value is None:
                continue
            if key not in known:
                raise ConfigError(f"unknown configuration key {key!r}")
            updates[key] = _coerce(key, value)
        return dataclasses.replace(self, **updates)


def _coerce(key: str, value: Any) -> Any:
    try:
        if key == "cache_dir":
            return Path(os.path.expanduser(str(value)))
        if key in ("direntry_capacity", "blob_size_limit", "retries"):
            n = int(value)
            if n < (0 if key == "retries" else 1):
                raise ValueError(n)
            return n
        if key in ("connect_timeout", "read_timeout"):
            t = float(value)
            if t <= 0:
                raise ValueError(t)
            return t
        if key in ("foreground", "debug"):
            if isinstance(value, str):
                return value.strip().lower() in ("1", "true", "yes", "on")
            return bool(value)
        if key == "api_base_url":
            url = str(value)
            return url if url.endswith("/") else url + "/"
        return None if value is None else str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {key}: {value!r}") from None


def read_file(path: Path) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except FileNotFoundError:
        return {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return data


def env_values(environ: Mapping[str, str] | None = None) -> dict[str, Any]:
    environ = os.environ if environ is None else environ
    return {
        "api_base_url": environ.get(ENV_API_URL) or None,
        "cache_dir": environ.get(ENV_CACHE_DIR) or None,
    }


def load_config(path: Path | str | None = None, flags: Mapping[str, Any] | None = None,
                environ: Mapping[str, str] | None = None) -> Config:
    """Resolve the effective configuration.

    Precedence, lowest first: built-in defaults, config file, environment
    variables, command-line flags.
    """
    environ = os.environ if environ is None else environ
    if path is None:
        path = environ.get(ENV_CONFIG) or default_config_path()
    config = Config()
    config = config.merged(read_file(Path(path)))
    config = config.merged(env_values(environ))
    return config.merged(flags or {})
