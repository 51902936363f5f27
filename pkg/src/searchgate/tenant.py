"""Per-user and per-group saved-objects namespaces.

Every user owns a private tenant, inherits one tenant per group, and may
be granted shared tenants from a definitions file. The selected tenant
lives in a server-side session keyed by an opaque cookie token, and the
proxy rewrites the logical saved-objects index (default ``.kibana``) in
request paths and bulk bodies to the selected tenant's backend index.
"""

from __future__ import annotations

import json
import re
import secrets
import threading
import time
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .acl import AclRule, INDEX_ACTIONS
from .auth import InvalidUsername, Principal, normalize_username
from .directory import Directory
from .httpbase import HttpRequest

SESSION_COOKIE = "tg_session"
DEFAULT_KIBANA_INDEX = ".kibana"
DEFAULT_SESSION_TTL_HOURS = 12.0


class TenantError(Exception):
    status = 400


class UnknownTenant(TenantError):
    status = 404


class ForbiddenTenant(TenantError):
    status = 403


class NoSession(TenantError):
    """Saved-objects access without a live session."""

    status = 401


class TenantDefsError(ValueError):
    pass


class TenantKind(str, Enum):
    PRIVATE = "private"
    GROUP = "group"
    GLOBAL = "global"


_KIND_PREFIX = {
    TenantKind.PRIVATE: ".kibana_u_",
    TenantKind.GROUP: ".kibana_g_",
    TenantKind.GLOBAL: ".kibana_s_",
}


def tenant_index_name(name: str, kind: TenantKind) -> str:
    """Deterministic, injective mapping from (name, kind) to a backend index."""
    return _KIND_PREFIX[TenantKind(kind)] + name


@dataclass(frozen=True)
class Tenant:
    name: str
    kind: TenantKind

    @property
    def index_name(self) -> str:
        return tenant_index_name(self.name, self.kind)


@dataclass(frozen=True)
class TenantDef:
    """File-defined shared tenant with its member users and g: groups."""

    name: str
    members: frozenset[str]


def parse_tenant_defs(obj, *, source: str = "<tenants>") -> tuple[TenantDef, ...]:
    if not isinstance(obj, dict) or not isinstance(obj.get("tenants"), list):
        raise TenantDefsError(f"{source}: expected top-level {{\"tenants\": [...]}}")
    defs: list[TenantDef] = []
    seen: set[str] = set()
    for i, entry in enumerate(obj["tenants"]):
        where = f"{source}: tenants[{i}]"
        if not isinstance(entry, dict):
            raise TenantDefsError(f"{where}: must be an object")
        try:
            name = normalize_username(str(entry.get("name", "")))
        except InvalidUsername as exc:
            raise TenantDefsError(f"{where}: illegal tenant name") from exc
        if name in seen:
            raise TenantDefsError(f"{where}: duplicate tenant {name!r}")
        seen.add(name)
        members = entry.get("members", [])
        if not isinstance(members, list):
            raise TenantDefsError(f"{where}: members must be a list")
        clean = []
        for member in members:
            text = str(member)
            bare = text[2:] if text.startswith("g:") else text
            try:
                normalize_username(bare)
            except InvalidUsername as exc:
                raise TenantDefsError(f"{where}: illegal member {member!r}") from exc
            clean.append(text)
        defs.append(TenantDef(name, frozenset(clean)))
    return tuple(defs)


def load_tenant_defs(path: str | Path) -> tuple[TenantDef, ...]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TenantDefsError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return parse_tenant_defs(obj, source=str(path))


def available_tenants(
    principal: Principal,
    groups: frozenset[str],
    file_defs: Sequence[TenantDef] = (),
) -> list[Tenant]:
    """The user's tenant list: private first, the rest lexicographic.

    Exactly one private tenant named after the user, one tenant per group,
    plus file-defined tenants whose member list names the user or one of
    their groups. Name collisions dedupe with private > group > shared.
    """
    private = Tenant(principal.username, TenantKind.PRIVATE)
    rest: dict[str, Tenant] = {}
    for group in sorted(groups):
        if group != private.name and group not in rest:
            rest[group] = Tenant(group, TenantKind.GROUP)
    for tdef in file_defs:
        if tdef.name == private.name or tdef.name in rest:
            continue
        granted = principal.username in tdef.members or any(
            f"g:{g}" in tdef.members for g in groups
        )
        if granted:
            rest[tdef.name] = Tenant(tdef.name, TenantKind.GLOBAL)
    return [private] + [rest[name] for name in sorted(rest)]


@dataclass(frozen=True)
class Session:
    session_id: str
    username: str
    selected_tenant: Tenant
    expires_at: float


def switch_tenant(session: Session, tenant_name: str, available: Sequence[Tenant],
                  known_names: Iterable[str] = ()) -> Session:
    """Re-point the session at one of the user's tenants.

    Raises ForbiddenTenant when the name exists but is not in the user's
    list (someone else's tenant), UnknownTenant when it names nothing.
    """
    for tenant in available:
        if tenant.name == tenant_name:
            return replace(session, selected_tenant=tenant)
    if tenant_name in set(known_names):
        raise ForbiddenTenant(f"tenant {tenant_name!r} is not available to {session.username!r}")
    raise UnknownTenant(f"no tenant named {tenant_name!r}")


class SessionStore:
    """Server-side sessions keyed by unguessable tokens (128+ bits).

    Per-session operations serialize under one lock so a switch and a
    concurrent read observe either the old or the new tenant, never a torn
    value. Expired sessions are reaped lazily.
    """

    def __init__(self, *, ttl_hours: float = DEFAULT_SESSION_TTL_HOURS, clock=time.time):
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        self.ttl_secs = ttl_hours * 3600.0
        self._clock = clock
        self._version = 0

    def create(self, username: str, tenant: Tenant) -> Session:
        session = Session(
            session_id=secrets.token_urlsafe(32),
            username=username,
            selected_tenant=tenant,
            expires_at=self._clock() + self.ttl_secs,
        )
        with self._lock:
            self._sessions[session.session_id] = session
        return session

    def get(self, session_id: str) -> Session | None:
        """Live session or None; presenting an expired id removes it."""
        now = self._clock()
        with self._lock:
            session = self._sessions.get(session_id)
            if session is None:
                return None
            if session.expires_at <= now:
                del self._sessions[session_id]
                return None
            return session

    def apply_switch(self, session_id: str, tenant_name: str,
                     available: Sequence[Tenant], known_names: Iterable[str] = ()) -> tuple[Session, int]:
        """Atomically switch the stored session; returns (session, version)."""
        with self._lock:
            session = self._sessions.get(session_id)
            if session is None or session.expires_at <= self._clock():
                self._sessions.pop(session_id, None)
                raise NoSession("session expired or unknown")
            updated = switch_tenant(session, tenant_name, available, known_names)
            self._sessions[session_id] = updated
            self._version += 1
            return updated, self._version

    def drop(self, session_id: str) -> None:
        with self._lock:
            self._sessions.pop(session_id, None)

    def __len__(self) -> int:
        with self._lock:
            return len(self._sessions)


_BULK_SUFFIX = "/_bulk"


def rewrite_index(request: HttpRequest, session: Session | None,
                  logical_index: str = DEFAULT_KIBANA_INDEX) -> HttpRequest:
    """Replace the logical saved-objects index with the session's tenant index.

    Exact-segment match only: the first path segment must equal the
    logical index; everything else in the request is preserved. Bulk
    bodies additionally get per-line ``_index`` fields equal to the
    logical index replaced. Non-matching requests pass through untouched.
    Idempotent: a rewritten path never matches the logical index again.
    """
    path = request.path
    segments = path.split("?", 1)[0].split("/")
    # path is absolute: segments[0] == "" for "/x/y"
    if len(segments) < 2 or segments[1] != logical_index:
        return request
    if session is None:
        raise NoSession("saved-objects access requires a session")
    target = session.selected_tenant.index_name
    segments[1] = target
    query = path.split("?", 1)
    new_path = "/".join(segments) + (f"?{query[1]}" if len(query) == 2 else "")
    rewritten = request.with_path(new_path)
    if new_path.split("?", 1)[0].endswith(_BULK_SUFFIX) and request.body:
        rewritten = rewritten.with_body(
            _rewrite_bulk_body(request.body, logical_index, target)
        )
    return rewritten


def _rewrite_bulk_body(body: bytes, logical_index: str, target: str) -> bytes:
    """Rewrite `_index` fields equal to the logical index in bulk action lines.

    Only matching action lines are re-serialized; all other lines keep
    their exact bytes.
    """
    lines = body.decode("utf-8").split("\n")
    out = []
    for line in lines:
        stripped = line.strip()
        if stripped:
            try:
                obj = json.loads(stripped)
            except json.JSONDecodeError:
                out.append(line)
                continue
            if (
                isinstance(obj, dict)
                and isinstance(obj.get("index"), dict)
                and obj["index"].get("_index") == logical_index
            ):
                obj["index"]["_index"] = target
                out.append(json.dumps(obj, separators=(",", ":")))
                continue
        out.append(line)
    return "\n".join(out).encode("utf-8")


def implicit_acl_rules(directory: Directory, file_defs: Sequence[TenantDef] = ()) -> tuple[AclRule, ...]:
    """Allow rules that wire tenancy to the access table.

    Every user gets all index actions on their own private tenant index
    (one variable rule), each declared group's members get the group
    tenant index, and file-defined tenants grant their member lists.
    """
    rules: list[AclRule] = [
        AclRule(
            role_name="__tenant_private",
            principals=frozenset({"*"}),
            index_patterns=(tenant_index_name("${user.name}", TenantKind.PRIVATE),),
            actions=frozenset(INDEX_ACTIONS),
        )
    ]
    for group in sorted(directory.groups):
        rules.append(
            AclRule(
                role_name=f"__tenant_group_{group}",
                principals=frozenset({f"g:{group}"}),
                index_patterns=(tenant_index_name(group, TenantKind.GROUP),),
                actions=frozenset(INDEX_ACTIONS),
            )
        )
    for tdef in file_defs:
        rules.append(
            AclRule(
                role_name=f"__tenant_shared_{tdef.name}",
                principals=frozenset(tdef.members),
                index_patterns=(tenant_index_name(tdef.name, TenantKind.GLOBAL),),
                actions=frozenset(INDEX_ACTIONS),
            )
        )
    return tuple(rules)


class SavedObjectType(str, Enum):
    SEARCH = "search"
    VISUALIZATION = "visualization"
    DASHBOARD = "dashboard"
    CONFIG = "config"


_SAVED_ID_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")


@dataclass(frozen=True)
class SavedObject:
    """A saved search/visualization/dashboard/config record.

    Stored in the tenant index under the compound id ``<type>:<id>`` so
    (type, id) uniqueness falls out of document-id uniqueness.
    """

    id: str
    object_type: SavedObjectType
    title: str
    body: Mapping

    def __post_init__(self):
        if not _SAVED_ID_RE.match(self.id):
            raise ValueError(f"illegal saved-object id {self.id!r}")

    @property
    def doc_id(self) -> str:
        return f"{self.object_type.value}:{self.id}"

    def to_fields(self) -> dict:
        return {
            "type": self.object_type.value,
            "title": self.title,
            "body": json.dumps(dict(self.body), sort_keys=True),
        }

    @classmethod
    def from_doc(cls, doc_id: str, fields: Mapping) -> "SavedObject":
        type_name, _, obj_id = doc_id.partition(":")
        return cls(
            id=obj_id,
            object_type=SavedObjectType(type_name),
            title=str(fields.get("title", "")),
            body=json.loads(fields.get("body", "{}")),
        )
