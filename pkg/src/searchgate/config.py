"""Gateway configuration: one JSON file covering every module's keys.

Shape (all sections optional, defaults shown in README):

    {
      "auth": {"mode", "header_name", "allow_anonymous", "credentials_path",
               "trusted_proxies"},
      "directory": {"path", "cache_ttl_secs"},
      "acl": {"path"},
      "tenant": {"kibana_index", "session_ttl_hours", "defs_path"},
      "gateway": {"listen", "backend", "request_timeout_secs",
                  "tls_cert", "tls_key", "ui_root"},
      "store": {"oplog_path", "scroll_ttl_secs"}
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields as dc_fields, replace
from pathlib import Path

from .auth import DEFAULT_IDENTITY_HEADER
from .tenant import DEFAULT_KIBANA_INDEX, DEFAULT_SESSION_TTL_HOURS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AuthConfig:
    mode: str = "basic"  # basic | trusted_header
    header_name: str = DEFAULT_IDENTITY_HEADER
    allow_anonymous: bool = False
    credentials_path: str = ""
    trusted_proxies: tuple[str, ...] = ("127.0.0.1", "::1")


@dataclass(frozen=True)
class DirectoryConfig:
    path: str = ""
    cache_ttl_secs: float = 30.0


@dataclass(frozen=True)
class AclConfig:
    path: str = ""


@dataclass(frozen=True)
class TenantConfig:
    kibana_index: str = DEFAULT_KIBANA_INDEX
    session_ttl_hours: float = DEFAULT_SESSION_TTL_HOURS
    defs_path: str | None = None


@dataclass(frozen=True)
class GatewaySection:
    listen: str = "127.0.0.1:9600"
    backend: str = "embedded"  # "embedded" or a base URL like http://host:9200
    request_timeout_secs: float = 30.0
    tls_cert: str | None = None
    tls_key: str | None = None
    ui_root: str | None = None


@dataclass(frozen=True)
class StoreConfig:
    oplog_path: str | None = None
    scroll_ttl_secs: float = 60.0


@dataclass(frozen=True)
class GatewayConfig:
    auth: AuthConfig = field(default_factory=AuthConfig)
    directory: DirectoryConfig = field(default_factory=DirectoryConfig)
    acl: AclConfig = field(default_factory=AclConfig)
    tenant: TenantConfig = field(default_factory=TenantConfig)
    gateway: GatewaySection = field(default_factory=GatewaySection)
    store: StoreConfig = field(default_factory=StoreConfig)


_SECTIONS = {
    "auth": AuthConfig,
    "directory": DirectoryConfig,
    "acl": AclConfig,
    "tenant": TenantConfig,
    "gateway": GatewaySection,
    "store": StoreConfig,
}


def _build_section(cls, obj: dict, where: str):
    known = {f.name: f for f in dc_fields(cls)}
    kwargs = {}
    for key, value in obj.items():
        if key not in known:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(obj: dict, *, source: str = "<config>") -> GatewayConfig:
    if not isinstance(obj, dict):
        raise ConfigError(f"{source}: top level must be an object")
    sections = {}
    for name, value in obj.items():
        cls = _SECTIONS.get(name)
        if cls is None:
            raise ConfigError(f"{source}: unknown section {name!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"{source}: section {name!r} must be an object")
        sections[name] = _build_section(cls, value, f"{source}.{name}")
    return GatewayConfig(**sections)


def load_config(path: str | Path) -> GatewayConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return config_from_dict(obj, source=str(path))


def with_overrides(config: GatewayConfig, *, listen: str | None = None,
                   backend: str | None = None, tls_cert: str | None = None,
                   tls_key: str | None = None) -> GatewayConfig:
    """Apply CLI flag overrides onto a loaded config."""
    section = config.gateway
    if listen is not None:
        section = replace(section, listen=listen)
    if backend is not None:
        section = replace(section, backend=backend)
    if tls_cert is not None:
        section = replace(section, tls_cert=tls_cert)
    if tls_key is not None:
        section = replace(section, tls_key=tls_key)
    return replace(config, gateway=section)
