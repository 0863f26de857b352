"""Layered run configuration: command line over environment over config file."""

from __future__ import annotations

import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

ENV_PREFIX = "TRACERAG_"
CONFIG_ENV = "TRACERAG_CONFIG"
DEFAULT_API_KEY_ENV = "TRACERAG_API_KEY"


@dataclass
class Config:
    base_url: str = "https://api.openai.com/v1"
    model: str = "o3-mini"
    embedding_model: str = "text-embedding-ada-002"
    embedding_provider: str = "mock"
    api_key_env: str = DEFAULT_API_KEY_ENV
    llm_mode: str = "replay"
    cache: str | None = None
    concurrency: int = 4
    max_turns: int = 5
    top_k: int = 5
    split_and_clean: bool = True
    use_descriptions: bool = True
    single_turn: bool = False
    out_dir: str = "out"

    def validate(self) -> "Config":
        if self.top_k < 1:
            raise ConfigError("top_k must be at least 1")
        if self.max_turns < 1:
            raise ConfigError("max_turns must be at least 1")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be at least 1")
        if self.llm_mode not in ("live", "replay", "record"):
            raise ConfigError(f"llm_mode must be live, replay or record, not {self.llm_mode!r}")
        if self.embedding_provider not in ("mock", "remote"):
            raise ConfigError(f"embedding_provider must be mock or remote, not {self.embedding_provider!r}")
        if self.llm_mode == "replay":
            if not self.cache:
                raise ConfigError("replay mode requires a cache path (--cache)")
            if not Path(self.cache).is_file():
                raise ConfigError(f"replay cache not found: {self.cache}")
        if self.llm_mode == "record" and not self.cache:
            raise ConfigError("record mode requires a cache path (--cache)")
        return self

    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env) or None

    def public_dict(self) -> dict:
        """Settings safe to write into artifacts; the key itself is never included."""
        return asdict(self)


_FIELDS = {f.name: f for f in fields(Config)}


def _coerce(name: str, value):
    kind = type(getattr(Config(), name))
    if name == "cache":
        return None if value in (None, "") else str(value)
    if isinstance(value, str):
        if kind is bool:
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ConfigError(f"{name}: expected a boolean, got {value!r}")
        if kind is int:
            try:
                return int(value)
            except ValueError:
                raise ConfigError(f"{name}: expected an integer, got {value!r}") from None
        return value
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{name}: expected an integer, got {value!r}")
    if kind is bool and not isinstance(value, bool):
        raise ConfigError(f"{name}: expected a boolean, got {value!r}")
    return value


def load_file(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad config file {path}: {exc}") from exc
    data = data.get("droidtrace", data)
    unknown = sorted(set(data) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {', '.join(unknown)}")
    if "api_key" in data:
        raise ConfigError("put the API key in the environment, not the config file")
    return data


def from_env(environ: dict | None = None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name in _FIELDS:
        key = ENV_PREFIX + name.upper()
        if key in environ and key != DEFAULT_API_KEY_ENV:
            out[name] = environ[key]
    return out


def resolve(cli: dict, config_path: str | None = None, environ: dict | None = None) -> Config:
    """Merge config file, environment and command-line values, later layers winning."""
    environ = os.environ if environ is None else environ
    merged: dict = {}
    path = config_path or environ.get(CONFIG_ENV)
    if path:
        merged.update(load_file(path))
    merged.update(from_env(environ))
    merged.update({k: v for k, v in cli.items() if v is not None and k in _FIELDS})
    return Config(**{k: _coerce(k, v) for k, v in merged.items()})
