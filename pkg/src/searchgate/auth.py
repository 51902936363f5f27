"""Request authentication and identity-header handling.

The authenticating front end of the pipeline: verifies credentials (basic
auth against a salted-digest credentials file, or a proxy-supplied trusted
header), normalizes usernames so they are safe to embed in index names,
and stamps exactly one identity header on every forwarded request while
removing any client-supplied impostor.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import logging
import re
import secrets
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .httpbase import Headers, HttpRequest

logger = logging.getLogger(__name__)

DEFAULT_IDENTITY_HEADER = "X-Authenticated-User"

_USERNAME_RE = re.compile(r"^[a-z0-9_.\-]+$")


class AuthError(Exception):
    """Base class for authentication failures. ``status`` is the HTTP status."""

    status = 401


class MissingCredentials(AuthError):
    status = 401


class BadCredentials(AuthError):
    status = 401


class UntrustedSource(AuthError):
    """Trusted-header auth attempted from a non-trusted listener."""

    status = 403


class InvalidUsername(ValueError):
    pass


class AuthMethod(str, Enum):
    BASIC = "basic"
    TRUSTED_HEADER = "trusted_header"
    ANONYMOUS = "anonymous"


def normalize_username(raw: str) -> str:
    """Lowercase and validate a username.

    Usernames become index-name fragments, so only ``[a-z0-9_.-]`` survives
    validation; anything else is rejected rather than silently stripped.
    """
    name = raw.strip().lower()
    if not name or not _USERNAME_RE.match(name):
        raise InvalidUsername(f"illegal username: {raw!r}")
    return name


@dataclass(frozen=True)
class Principal:
    username: str
    auth_method: AuthMethod

    def __post_init__(self):
        if not _USERNAME_RE.match(self.username):
            raise InvalidUsername(f"illegal username: {self.username!r}")


ANONYMOUS = "anonymous"

# Deliberately iterated: password verification is real per-request work at
# the security boundary, the same cost bucket the benchmark measures.
DIGEST_ITERATIONS = 2000

_CREDENTIALS_HEADER = (
    "# searchgate credentials v1\n"
    "# one entry per line: username:salt:digest\n"
    f"# digest = hex(pbkdf2_hmac(sha256, password, salt, {DIGEST_ITERATIONS}))\n"
)


def _digest(salt: str, password: str) -> str:
    return hashlib.pbkdf2_hmac(
        "sha256", password.encode("utf-8"), salt.encode("utf-8"), DIGEST_ITERATIONS
    ).hex()


def make_credentials_line(username: str, password: str, salt: str | None = None) -> str:
    username = normalize_username(username)
    salt = salt if salt is not None else secrets.token_hex(8)
    return f"{username}:{salt}:{_digest(salt, password)}"


def write_credentials(path: str | Path, users: dict[str, str]) -> None:
    """Write a credentials file mapping username -> password."""
    lines = [_CREDENTIALS_HEADER.rstrip("\n")]
    lines += [make_credentials_line(u, p) for u, p in users.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class CredentialsFileError(ValueError):
    pass


class CredentialStore:
    """Salted password digests loaded from a line-oriented file.

    Digests are never exposed: verification happens inside the store and
    the entry map stays private. Reload swaps the whole entry map
    atomically so concurrent verifiers see either the old or the new file.
    """

    def __init__(self, entries: dict[str, tuple[str, str]], source_path: str = ""):
        self._entries = dict(entries)
        self.source_path = source_path
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path: str | Path) -> "CredentialStore":
        return cls(cls._parse(Path(path).read_text(encoding="utf-8"), str(path)), str(path))

    @staticmethod
    def _parse(text: str, source: str) -> dict[str, tuple[str, str]]:
        entries: dict[str, tuple[str, str]] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(":")
            if len(parts) != 3:
                raise CredentialsFileError(f"{source}:{lineno}: expected username:salt:digest")
            try:
                username = normalize_username(parts[0])
            except InvalidUsername as exc:
                raise CredentialsFileError(f"{source}:{lineno}: {exc}") from exc
            if username in entries:
                raise CredentialsFileError(f"{source}:{lineno}: duplicate username {username!r}")
            entries[username] = (parts[1], parts[2])
        return entries

    def reload(self, path: str | Path | None = None) -> None:
        path = Path(path if path is not None else self.source_path)
        entries = self._parse(path.read_text(encoding="utf-8"), str(path))
        with self._lock:
            self._entries = entries
            self.source_path = str(path)

    def verify(self, username: str, password: str) -> bool:
        entry = self._entries.get(username)
        if entry is None:
            return False
        salt, digest = entry
        return secrets.compare_digest(_digest(salt, password), digest)

    def knows(self, username: str) -> bool:
        return username in self._entries

    def usernames(self) -> frozenset[str]:
        return frozenset(self._entries)

    def __repr__(self) -> str:
        return f"CredentialStore({len(self._entries)} entries from {self.source_path!r})"


def _parse_basic(value: str) -> tuple[str, str]:
    scheme, _, payload = value.partition(" ")
    if scheme.lower() != "basic" or not payload.strip():
        raise BadCredentials("unsupported Authorization scheme")
    try:
        decoded = base64.b64decode(payload.strip(), validate=True).decode("utf-8")
    except (binascii.Error, UnicodeDecodeError) as exc:
        raise BadCredentials("malformed basic credentials") from exc
    username, sep, password = decoded.partition(":")
    if not sep:
        raise BadCredentials("malformed basic credentials")
    return username, password


def authenticate(
    headers: Headers,
    store: CredentialStore,
    mode: AuthMethod | str,
    *,
    header_name: str = DEFAULT_IDENTITY_HEADER,
    allow_anonymous: bool = False,
    trusted_source: bool = False,
) -> Principal:
    """Authenticate a request and return its Principal.

    ``basic`` verifies an ``Authorization: Basic`` header against the
    credential store; ``trusted_header`` accepts the identity header, but
    only when the request arrived on a trusted listener. With anonymous
    access disabled (the default), absent credentials raise
    MissingCredentials.
    """
    mode = AuthMethod(mode)
    if mode is AuthMethod.BASIC:
        value = headers.get("Authorization")
        if value is None:
            if allow_anonymous:
                return Principal(ANONYMOUS, AuthMethod.ANONYMOUS)
            raise MissingCredentials("no Authorization header")
        raw_user, password = _parse_basic(value)
        try:
            username = normalize_username(raw_user)
        except InvalidUsername as exc:
            raise BadCredentials(str(exc)) from exc
        if not store.verify(username, password):
            raise BadCredentials(f"bad credentials for {username!r}")
        return Principal(username, AuthMethod.BASIC)

    if mode is AuthMethod.TRUSTED_HEADER:
        if not trusted_source:
            raise UntrustedSource("identity header only accepted from the trusted listener")
        value = headers.get(header_name)
        if value is None:
            if allow_anonymous:
                return Principal(ANONYMOUS, AuthMethod.ANONYMOUS)
            raise MissingCredentials(f"no {header_name} header")
        try:
            username = normalize_username(value)
        except InvalidUsername as exc:
            raise BadCredentials(str(exc)) from exc
        return Principal(username, AuthMethod.TRUSTED_HEADER)

    raise ValueError(f"unsupported auth mode: {mode}")


def strip_spoofed_headers(request: HttpRequest, header_name: str = DEFAULT_IDENTITY_HEADER) -> HttpRequest:
    """Drop every client-supplied identity header, any casing, keep the rest."""
    if request.headers.get(header_name) is None:
        return request
    headers = request.headers.copy()
    headers.remove_all(header_name)
    return request.with_headers(headers)


def inject_identity(
    request: HttpRequest,
    principal: Principal,
    header_name: str = DEFAULT_IDENTITY_HEADER,
) -> HttpRequest:
    """Stamp exactly one identity header carrying the authenticated username."""
    headers = request.headers.copy()
    headers.set(header_name, principal.username)
    return request.with_headers(headers)
