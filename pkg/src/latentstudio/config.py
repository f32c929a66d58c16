"""Plain-text key=value service configuration with environment overrides.

Lines are `KEY=VALUE`; `#` starts a comment. Every key can also be set by
an environment variable named LATENTSTUDIO_<KEY>; the environment wins
over the file, the file over the defaults.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

ENV_PREFIX = "LATENTSTUDIO_"


class ConfigError(ValueError):
    pass


@dataclass
class ServiceConfig:
    model_dir: str = "models"
    sessions_dir: str = "sessions"
    host: str = "127.0.0.1"
    port: int = 8321
    step_budget: int = 20          # max latent steps per request
    default_steps: int = 5         # steps per request when unspecified
    candidate_count: int = 64
    candidate_keep: int = 9
    candidate_steps: int = 10
    projection_steps: int = 60
    projection_restarts: int = 4
    ui_dir: str = ""               # optional static bundle to serve at /ui

    def validate(self) -> "ServiceConfig":
        if not (0 < self.port < 65536):
            raise ConfigError(f"port out of range: {self.port}")
        for key in ("step_budget", "default_steps", "candidate_count",
                    "candidate_keep", "candidate_steps", "projection_steps",
                    "projection_restarts"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        if self.candidate_keep > self.candidate_count:
            raise ConfigError("candidate_keep cannot exceed candidate_count")
        return self


def _parse_kv(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected KEY=VALUE, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().lower()] = value.strip()
    return out


def load_config(path: str | None = None, env: dict | None = None) -> ServiceConfig:
    env = os.environ if env is None else env
    cfg = ServiceConfig()
    values = {}
    if path:
        with open(path) as fh:
            values.update(_parse_kv(fh.read()))
    for f in fields(ServiceConfig):
        env_key = ENV_PREFIX + f.name.upper()
        if env_key in env:
            values[f.name] = env[env_key]
    for key, raw in values.items():
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        try:
            setattr(cfg, key, type(current)(raw) if not isinstance(current, str) else raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return cfg.validate()
