"""Application configuration: one JSON file, strictly validated.

Unknown keys are rejected at every level so typos fail loudly. String
values support ``${ENV_VAR}`` interpolation — intended for secrets-adjacent
fields like endpoints; the API key itself never lives in config (the
client reads it from the environment variable named by ``auth_env``).
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, IoError
from .mllm_client import ClientConfig
from .reward import ClampMode, RewardConfig

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def _interpolate(value: str) -> str:
    def repl(m: re.Match) -> str:
        var = m.group(1)
        if var not in os.environ:
            raise ConfigError(f"config references unset environment variable ${{{var}}}")
        return os.environ[var]

    return _ENV_RE.sub(repl, value)


def _section(obj: dict, name: str, allowed: set[str]) -> dict:
    section = obj.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
    out = {}
    for key, value in section.items():
        out[key] = _interpolate(value) if isinstance(value, str) else value
    return out


@dataclass(frozen=True)
class AnnotateSettings:
    l_max: int = 6
    workers: int = 1
    manual_gate: bool = False
    #: Path to a synonym table; None uses the shipped default.
    hint_synonyms: str | None = None
    format_retry: bool = True

    def __post_init__(self):
        if self.l_max < 1:
            raise ConfigError(f"annotate.l_max must be >= 1, got {self.l_max}")
        if self.workers < 1:
            raise ConfigError(f"annotate.workers must be >= 1, got {self.workers}")


@dataclass(frozen=True)
class PathSettings:
    out_root: str = "out"


@dataclass(frozen=True)
class AppConfig:
    reward: RewardConfig = field(default_factory=RewardConfig)
    client: ClientConfig | None = None
    annotate: AnnotateSettings = field(default_factory=AnnotateSettings)
    paths: PathSettings = field(default_factory=PathSettings)


_REWARD_KEYS = {"beta_fast", "beta_rsn", "beta_tool", "gamma", "clamp_mode", "group_size", "std_epsilon"}
_CLIENT_KEYS = {"endpoint", "auth_env", "model", "timeout", "max_retries", "backoff_base",
                "temperature", "rate_limit_per_minute", "extra_params"}
_ANNOTATE_KEYS = {"l_max", "workers", "manual_gate", "hint_synonyms", "format_retry"}
_PATH_KEYS = {"out_root"}
_TOP_KEYS = {"reward", "client", "annotate", "paths"}


def app_config_from_obj(obj: dict) -> AppConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(obj) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    try:
        reward_kwargs = _section(obj, "reward", _REWARD_KEYS)
        if "gamma" in reward_kwargs:
            reward_kwargs["gamma"] = tuple(float(g) for g in reward_kwargs["gamma"])
        if "clamp_mode" in reward_kwargs:
            reward_kwargs["clamp_mode"] = ClampMode(reward_kwargs["clamp_mode"])
        reward = RewardConfig(**reward_kwargs)

        client = None
        if "client" in obj:
            client_kwargs = _section(obj, "client", _CLIENT_KEYS)
            if "endpoint" not in client_kwargs:
                raise ConfigError("config section 'client' requires 'endpoint'")
            client = ClientConfig(**client_kwargs)

        annotate = AnnotateSettings(**_section(obj, "annotate", _ANNOTATE_KEYS))
        paths = PathSettings(**_section(obj, "paths", _PATH_KEYS))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    return AppConfig(reward=reward, client=client, annotate=annotate, paths=paths)


def load_app_config(path: str | Path | None) -> AppConfig:
    """Load and validate; a missing path yields all defaults."""
    if path is None:
        return AppConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    return app_config_from_obj(obj)
