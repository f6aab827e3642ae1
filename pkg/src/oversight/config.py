"""Runtime configuration: per-role model endpoints, service limits, storage.

Precedence is CLI overrides > environment variables > config file > defaults.
Each model role can point at a different OpenAI-compatible endpoint, mirroring
deployments that mix providers per role.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .gateway import Gateway, HttpBackend, ModelParams, MODEL_ROLES, default_params

__all__ = [
    "ConfigError",
    "RoleConfig",
    "ServiceLimits",
    "AppConfig",
    "load_config",
    "build_gateway",
    "ENV_PREFIX",
]

ENV_PREFIX = "OVERSIGHT"

DEFAULT_BODY_CAP = 16 * 1024  # request bodies above this are rejected
DEFAULT_MAX_SESSIONS = 16
DEFAULT_TURN_CAP = 12


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RoleConfig:
    base_url: str | None = None
    api_key: str | None = None
    model: str | None = None
    temperature: float | None = None
    max_tokens: int | None = None
    timeout: float | None = None

    @property
    def reachable(self) -> bool:
        return bool(self.base_url and self.model)

    def params(self, role: str) -> ModelParams:
        base = default_params(role)
        return ModelParams(
            temperature=base.temperature if self.temperature is None else self.temperature,
            max_tokens=base.max_tokens if self.max_tokens is None else self.max_tokens,
            timeout=base.timeout if self.timeout is None else self.timeout,
        )


@dataclass(frozen=True)
class ServiceLimits:
    max_sessions: int = DEFAULT_MAX_SESSIONS
    turn_cap: int = DEFAULT_TURN_CAP
    body_cap: int = DEFAULT_BODY_CAP

    def __post_init__(self):
        for name in ("max_sessions", "turn_cap", "body_cap"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"limit {name} must be positive")


@dataclass(frozen=True)
class AppConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    storage_root: Path = Path("oversight-data")
    bearer_token: str | None = None
    frontend_dist: Path | None = None
    limits: ServiceLimits = field(default_factory=ServiceLimits)
    roles: Mapping[str, RoleConfig] = field(
        default_factory=lambda: {role: RoleConfig() for role in MODEL_ROLES})


_SERVICE_KEYS = {
    "host": str,
    "port": int,
    "storage_root": Path,
    "bearer_token": str,
    "frontend_dist": Path,
    "max_sessions": int,
    "turn_cap": int,
    "body_cap": int,
}

_ROLE_KEYS = {
    "base_url": str,
    "api_key": str,
    "model": str,
    "temperature": float,
    "max_tokens": int,
    "timeout": float,
}


def _read_config_file(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".toml":
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    if path.suffix == ".json":
        return json.loads(path.read_text(encoding="utf-8"))
    raise ConfigError(f"config file must be .toml or .json, got {path.name}")


def _coerce(name: str, value, target_type):
    try:
        if target_type is Path:
            return Path(value)
        if target_type is float:
            return float(value)
        if target_type is int:
            return int(value)
        return str(value)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad value for {name}: {value!r}") from err


def _from_file(doc: dict) -> tuple[dict, dict[str, dict]]:
    service: dict = {}
    raw_service = doc.get("service", {})
    if not isinstance(raw_service, dict):
        raise ConfigError("'service' section must be a table")
    for key, value in raw_service.items():
        if key not in _SERVICE_KEYS:
            raise ConfigError(f"unknown service config key {key!r}")
        service[key] = _coerce(f"service.{key}", value, _SERVICE_KEYS[key])

    roles: dict[str, dict] = {}
    raw_roles = doc.get("roles", {})
    if not isinstance(raw_roles, dict):
        raise ConfigError("'roles' section must be a table")
    for role, table in raw_roles.items():
        if role not in MODEL_ROLES:
            raise ConfigError(f"unknown model role {role!r} in config")
        if not isinstance(table, dict):
            raise ConfigError(f"roles.{role} must be a table")
        fields = {}
        for key, value in table.items():
            if key not in _ROLE_KEYS:
                raise ConfigError(f"unknown key roles.{role}.{key}")
            fields[key] = _coerce(f"roles.{role}.{key}", value, _ROLE_KEYS[key])
        roles[role] = fields
    return service, roles


def _from_env(env: Mapping[str, str]) -> tuple[dict, dict[str, dict]]:
    service: dict = {}
    simple = {
        f"{ENV_PREFIX}_HOST": "host",
        f"{ENV_PREFIX}_PORT": "port",
        f"{ENV_PREFIX}_STORAGE_ROOT": "storage_root",
        f"{ENV_PREFIX}_BEARER_TOKEN": "bearer_token",
        f"{ENV_PREFIX}_FRONTEND_DIST": "frontend_dist",
        f"{ENV_PREFIX}_MAX_SESSIONS": "max_sessions",
        f"{ENV_PREFIX}_TURN_CAP": "turn_cap",
        f"{ENV_PREFIX}_BODY_CAP": "body_cap",
    }
    for var, key in simple.items():
        if var in env:
            service[key] = _coerce(var, env[var], _SERVICE_KEYS[key])

    roles: dict[str, dict] = {}
    role_vars = {"API_KEY": "api_key", "BASE_URL": "base_url", "MODEL": "model"}
    for role in MODEL_ROLES:
        fields = {}
        for var_part, key in role_vars.items():
            var = f"{ENV_PREFIX}_{var_part}_{role.upper()}"
            if var in env:
                fields[key] = env[var]
        if fields:
            roles[role] = fields
    return service, roles


def _merge_role(base: RoleConfig, fields: dict) -> RoleConfig:
    return replace(base, **fields)


def load_config(
    path: str | Path | None = None,
    *,
    env: Mapping[str, str] | None = None,
    overrides: dict | None = None,
) -> AppConfig:
    """Assemble configuration with CLI > env > file > defaults precedence.

    overrides uses the same flat service keys plus optional
    {"roles": {role: {...}}} for per-role values.
    """
    env = os.environ if env is None else env
    overrides = overrides or {}

    file_service: dict = {}
    file_roles: dict[str, dict] = {}
    if path is not None:
        file_service, file_roles = _from_file(_read_config_file(Path(path)))
    env_service, env_roles = _from_env(env)

    service: dict = {}
    for layer in (file_service, env_service):
        service.update(layer)
    for key, value in overrides.items():
        if key == "roles":
            continue
        if key not in _SERVICE_KEYS:
            raise ConfigError(f"unknown config override {key!r}")
        if value is not None:
            service[key] = _coerce(key, value, _SERVICE_KEYS[key])

    roles = {role: RoleConfig() for role in MODEL_ROLES}
    for layer in (file_roles, env_roles, overrides.get("roles", {})):
        for role, fields in layer.items():
            if role not in MODEL_ROLES:
                raise ConfigError(f"unknown model role {role!r}")
            roles[role] = _merge_role(roles[role], fields)

    limits = ServiceLimits(
        max_sessions=service.pop("max_sessions", DEFAULT_MAX_SESSIONS),
        turn_cap=service.pop("turn_cap", DEFAULT_TURN_CAP),
        body_cap=service.pop("body_cap", DEFAULT_BODY_CAP),
    )
    return AppConfig(limits=limits, roles=roles, **service)


def build_gateway(config: AppConfig, *, recorder=None, clock=None) -> Gateway:
    """HTTP backends for every role with an endpoint and model configured."""
    backends = {}
    params = {}
    for role, role_config in config.roles.items():
        if not role_config.reachable:
            continue
        backends[role] = HttpBackend(
            base_url=role_config.base_url,
            model=role_config.model,
            api_key=role_config.api_key or "",
        )
        params[role] = role_config.params(role)
    if not backends:
        raise ConfigError(
            "no model role has both base_url and model configured; "
            f"set {ENV_PREFIX}_BASE_URL_<ROLE> and {ENV_PREFIX}_MODEL_<ROLE> "
            "or provide a config file")
    kwargs = {"params": params, "recorder": recorder}
    if clock is not None:
        kwargs["clock"] = clock
    return Gateway(backends, **kwargs)
