"""Shared fixtures: a full gateway stack on disk, servers, and TLS certs."""

from __future__ import annotations

import datetime
import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for `oracles`

from searchgate.acl import AclHolder
from searchgate.auth import CredentialStore, write_credentials
from searchgate.config import GatewayConfig, config_from_dict
from searchgate.directory import DirectoryService
from searchgate.gateway import EmbeddedBackend, GatewayCore
from searchgate.httpbase import Headers, HttpRequest
from searchgate.store import MiniStore
from searchgate.tenant import SessionStore, load_tenant_defs

USERS = {
    "user01": "password01",
    "user02": "password02",
    "admin": "adminpass",
    "bench": "benchpass",
}

DIRECTORY = {
    "groups": {
        "group01": ["user01", "user02"],
        "group02": ["user02"],
        "ops": ["admin"],
    }
}

ACL_ROLES = {
    "roles": [
        {
            "name": "admin_all",
            "principals": ["admin"],
            "index_patterns": ["*"],
            "actions": ["read", "write", "delete", "manage",
                        "cluster_monitor", "cluster_admin"],
        },
        {
            "name": "bench_rw",
            "principals": ["bench"],
            "index_patterns": ["geonames*"],
            "actions": ["read", "write", "delete", "manage", "cluster_monitor"],
        },
        {
            "name": "logs_readers",
            "principals": ["g:group01"],
            "index_patterns": ["logs-*"],
            "actions": ["read"],
        },
    ]
}

TENANT_DEFS = {"tenants": [{"name": "global-ops", "members": ["g:group01", "admin"]}]}


def write_stack_files(root: Path, *, acl_roles: dict | None = None,
                      directory: dict | None = None,
                      tenant_defs: dict | None = None,
                      users: dict | None = None) -> dict[str, Path]:
    root.mkdir(parents=True, exist_ok=True)
    paths = {
        "credentials": root / "credentials",
        "directory": root / "directory.json",
        "acl": root / "acl.json",
        "tenants": root / "tenants.json",
    }
    write_credentials(paths["credentials"], users or USERS)
    paths["directory"].write_text(json.dumps(directory or DIRECTORY))
    paths["acl"].write_text(json.dumps(acl_roles or ACL_ROLES))
    paths["tenants"].write_text(json.dumps(tenant_defs or TENANT_DEFS))
    return paths


def make_config(paths: dict[str, Path], **gateway_keys) -> GatewayConfig:
    return config_from_dict(
        {
            "auth": {"mode": "basic", "credentials_path": str(paths["credentials"])},
            "directory": {"path": str(paths["directory"]), "cache_ttl_secs": 0},
            "acl": {"path": str(paths["acl"])},
            "tenant": {"defs_path": str(paths["tenants"])},
            "gateway": {"backend": "embedded", **gateway_keys},
        }
    )


class StageRecorder:
    def __init__(self):
        self.events: list[tuple[str, str, dict]] = []

    def __call__(self, stage: str, request_id: str, detail: dict) -> None:
        self.events.append((stage, request_id, detail))

    def stages_for(self, request_id: str) -> list[str]:
        return [s for s, rid, _ in self.events if rid == request_id]

    def last_stages(self) -> list[str]:
        if not self.events:
            return []
        last_rid = self.events[-1][1]
        return self.stages_for(last_rid)


class RecordingBackend:
    """Wraps a backend and keeps every request it saw."""

    def __init__(self, inner):
        self.inner = inner
        self.requests: list[HttpRequest] = []

    def handle(self, request: HttpRequest) -> "HttpResponse":
        self.requests.append(request)
        return self.inner.handle(request)


def make_core(tmp_path: Path, *, record_backend: bool = False, store: MiniStore | None = None,
              acl_roles: dict | None = None, directory: dict | None = None,
              tenant_defs: dict | None = None, users: dict | None = None,
              **gateway_keys):
    """Full gateway stack on a tmp dir; returns (core, handles dict)."""
    paths = write_stack_files(tmp_path / "etc", acl_roles=acl_roles, directory=directory,
                              tenant_defs=tenant_defs, users=users)
    cfg = make_config(paths, **gateway_keys)
    store = store if store is not None else MiniStore()
    recorder = StageRecorder()
    backend = EmbeddedBackend(store)
    wrapped = RecordingBackend(backend) if record_backend else backend
    core = GatewayCore(
        cfg,
        credentials=CredentialStore.load(paths["credentials"]),
        directory=DirectoryService.from_file(paths["directory"], cache_ttl_secs=0),
        acl_holder=AclHolder.from_file(paths["acl"]),
        sessions=SessionStore(ttl_hours=cfg.tenant.session_ttl_hours),
        backend=wrapped,
        tenant_defs=load_tenant_defs(paths["tenants"]),
        stage_hook=recorder,
    )
    return core, {
        "paths": paths,
        "config": cfg,
        "store": store,
        "recorder": recorder,
        "backend": wrapped,
    }


def basic_auth(user: str, password: str) -> tuple[str, str]:
    import base64

    token = base64.b64encode(f"{user}:{password}".encode()).decode()
    return ("Authorization", f"Basic {token}")


def http_call(base_url: str, method: str, path: str, *, user: str | None = None,
              password: str | None = None, body=None,
              headers: list[tuple[str, str]] | None = None, ca_file: str | None = None):
    """Tiny stdlib HTTP(S) client; returns (status, headers list, body bytes)."""
    import http.client
    import ssl
    from urllib.parse import urlsplit

    parts = urlsplit(base_url)
    if parts.scheme == "https":
        context = ssl.create_default_context(cafile=ca_file)
        conn = http.client.HTTPSConnection(parts.hostname, parts.port, context=context)
    else:
        conn = http.client.HTTPConnection(parts.hostname, parts.port)
    hdrs = dict(headers or [])
    if user is not None:
        name, value = basic_auth(user, password if password is not None else USERS[user])
        hdrs[name] = value
    if isinstance(body, (dict, list)):
        body = json.dumps(body).encode()
    elif isinstance(body, str):
        body = body.encode()
    try:
        conn.request(method, path, body=body, headers=hdrs)
        response = conn.getresponse()
        payload = response.read()
        return response.status, response.getheaders(), payload
    finally:
        conn.close()


def request(method: str, path: str, *, user: str | None = None, password: str | None = None,
            body=None, headers: list[tuple[str, str]] | None = None,
            client_host: str = "127.0.0.1") -> HttpRequest:
    hdrs = Headers(headers or [])
    if user is not None:
        hdrs.add(*basic_auth(user, password if password is not None else USERS[user]))
    if isinstance(body, (dict, list)):
        body = json.dumps(body).encode()
    elif isinstance(body, str):
        body = body.encode()
    return HttpRequest(method=method, path=path, headers=hdrs,
                       body=body or b"", client_host=client_host)


@pytest.fixture
def stack(tmp_path):
    core, handles = make_core(tmp_path, record_backend=True)
    return core, handles


@pytest.fixture(scope="session")
def tls_cert_pair(tmp_path_factory):
    """Self-signed localhost cert for TLS tests."""
    from cryptography import x509
    from cryptography.hazmat.primitives import hashes, serialization
    from cryptography.hazmat.primitives.asymmetric import rsa
    from cryptography.x509.oid import NameOID

    key = rsa.generate_private_key(public_exponent=65537, key_size=2048)
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, "localhost")])
    now = datetime.datetime.now(datetime.timezone.utc)
    cert = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - datetime.timedelta(minutes=5))
        .not_valid_after(now + datetime.timedelta(days=2))
        .add_extension(
            x509.SubjectAlternativeName(
                [x509.DNSName("localhost"), x509.IPAddress(__import__("ipaddress").ip_address("127.0.0.1"))]
            ),
            critical=False,
        )
        .sign(key, hashes.SHA256())
    )
    root = tmp_path_factory.mktemp("tls")
    cert_path = root / "cert.pem"
    key_path = root / "key.pem"
    cert_path.write_bytes(cert.public_bytes(serialization.Encoding.PEM))
    key_path.write_bytes(
        key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.TraditionalOpenSSL,
            serialization.NoEncryption(),
        )
    )
    return {"cert": cert_path, "key": key_path}
