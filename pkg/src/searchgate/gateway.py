"""The reverse-proxy pipeline.

Every inbound request runs, in order: spoofed-header strip, authentication,
group resolution, session resolution, tenant index rewrite, action mapping,
authorization, document-filter injection (reads), identity injection, and
forwarding. Authorization always sees the post-rewrite index, and no path
reaches the backend without a deny check. Failed authentication
short-circuits before the tenant and ACL stages.

Self-service endpoints (`/_ownhome/*`) and the admin reload
(`POST /_acl/reload`, cluster_admin) are dispatched here rather than
forwarded.
"""

from __future__ import annotations

import http.client
import json
import logging
import mimetypes
import re
import socket
import threading
import uuid
from dataclasses import dataclass
from http.cookies import SimpleCookie
from pathlib import Path
from typing import Callable, Protocol

from . import acl as aclmod
from . import auth as authmod
from . import storeapi
from .acl import AclHolder, Action, Decision
from .auth import AuthError, AuthMethod, CredentialStore, Principal
from .config import ConfigError, GatewayConfig
from .directory import DirectoryService
from .httpbase import HOP_BY_HOP, Headers, HttpRequest, HttpResponse, error_response, json_response
from .query import MalformedQuery, parse_query_json, query_to_json
from .store import MiniStore
from .tenant import (
    SESSION_COOKIE,
    NoSession,
    SessionStore,
    Tenant,
    TenantError,
    TenantKind,
    available_tenants,
    implicit_acl_rules,
    load_tenant_defs,
    rewrite_index,
)

logger = logging.getLogger(__name__)

REQUEST_ID_HEADER = "X-Request-Id"

_INDEX_SEGMENT = "{index}"
_ID_SEGMENT = "{id}"

# Ordered route table; first match wins. Total over the exposed backend,
# cluster, and admin API (self-service /_ownhome routes dispatch before
# action mapping and are listed in OWNHOME_ROUTES).
ACTION_ROUTES: tuple[tuple[str, str, Action], ...] = (
    ("GET", "/_cluster/health", Action.CLUSTER_MONITOR),
    ("POST", "/_acl/reload", Action.CLUSTER_ADMIN),
    ("POST", "/{index}/_search/scroll", Action.READ),
    ("POST", "/{index}/_search", Action.READ),
    ("POST", "/{index}/_aggregate", Action.READ),
    ("POST", "/{index}/_bulk", Action.WRITE),
    ("PUT", "/{index}/_doc/{id}", Action.WRITE),
    ("GET", "/{index}/_doc/{id}", Action.READ),
    ("PUT", "/{index}", Action.MANAGE),
    ("DELETE", "/{index}", Action.DELETE),
)

OWNHOME_ROUTES = ("/_ownhome/tenants", "/_ownhome/switch", "/_ownhome/ui")


class UnknownRoute(Exception):
    status = 404


class BackendUnreachable(Exception):
    status = 502


class BackendTimeout(Exception):
    status = 504


@dataclass(frozen=True)
class RouteMatch:
    action: Action
    index: str | None
    route: str  # the matched pattern, e.g. "POST /{index}/_search"


@dataclass(frozen=True)
class RequestContext:
    """Immutable record of what the pipeline decided for one request."""

    principal: Principal
    groups: frozenset[str]
    session_id: str | None
    action: Action
    target_index: str | None
    rewritten: bool


_INDEX_NAME_RE = re.compile(r"^[a-z0-9_.\-]+$")
_DOC_ID_RE = re.compile(r"^[A-Za-z0-9_.:\-]+$")


def _is_index_name(segment: str) -> bool:
    return bool(_INDEX_NAME_RE.match(segment)) and not segment.startswith("_")


def _is_doc_id(segment: str) -> bool:
    return bool(_DOC_ID_RE.match(segment))


def map_action(method: str, path: str) -> RouteMatch:
    """Resolve (HTTP method, path) to (action, target index).

    The path must be normalized: no `..` segments, no percent-encoded
    slashes, no empty segments. Unknown routes 404 before authorization so
    denied callers learn nothing about index existence.
    """
    clean = path.split("?", 1)[0]
    lowered = clean.lower()
    if ".." in clean.split("/") or "%2f" in lowered or "%2e" in lowered:
        raise UnknownRoute(f"no route for {method} {clean}")
    segments = clean.split("/")[1:]
    if "" in segments or not segments:
        raise UnknownRoute(f"no route for {method} {clean}")
    for route_method, pattern, action in ACTION_ROUTES:
        if method.upper() != route_method:
            continue
        pattern_segments = pattern.split("/")[1:]
        if len(pattern_segments) != len(segments):
            continue
        index: str | None = None
        ok = True
        for pat, seg in zip(pattern_segments, segments):
            if pat == _INDEX_SEGMENT:
                if not _is_index_name(seg):
                    ok = False
                    break
                index = seg
            elif pat == _ID_SEGMENT:
                if not _is_doc_id(seg):
                    ok = False
                    break
            elif pat != seg:
                ok = False
                break
        if ok:
            return RouteMatch(action=action, index=index, route=f"{route_method} {pattern}")
    raise UnknownRoute(f"no route for {method} {clean}")


class Backend(Protocol):
    def handle(self, request: HttpRequest) -> HttpResponse: ...


class EmbeddedBackend:
    """In-process store behind the same interface as a remote backend."""

    def __init__(self, store: MiniStore):
        self.store = store

    def handle(self, request: HttpRequest) -> HttpResponse:
        return storeapi.route(self.store, request)


class RemoteBackend:
    """Forwards over HTTP with per-thread persistent connections.

    Bodies proxy byte-faithfully; hop-by-hop headers are dropped in both
    directions per the HTTP spec.
    """

    def __init__(self, base_url: str, timeout_secs: float = 30.0):
        if base_url.startswith("http://"):
            self._host = base_url[len("http://"):]
        else:
            raise ConfigError(f"unsupported backend url {base_url!r} (http:// only)")
        self._host = self._host.rstrip("/")
        self.timeout_secs = timeout_secs
        self._local = threading.local()

    def _connection(self) -> http.client.HTTPConnection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = http.client.HTTPConnection(self._host, timeout=self.timeout_secs)
            self._local.conn = conn
        return conn

    def handle(self, request: HttpRequest) -> HttpResponse:
        headers = {
            name: value
            for name, value in request.headers.items()
            if name.lower() not in HOP_BY_HOP and name.lower() != "host"
        }
        headers["Content-Length"] = str(len(request.body))
        for attempt in (1, 2):  # one retry for a dropped keep-alive connection
            conn = self._connection()
            try:
                conn.request(request.method, request.path, body=request.body, headers=headers)
                raw = conn.getresponse()
                body = raw.read()
                resp_headers = tuple(
                    (name, value)
                    for name, value in raw.getheaders()
                    if name.lower() not in HOP_BY_HOP and name.lower() != "content-length"
                )
                return HttpResponse(status=raw.status, headers=resp_headers, body=body)
            except socket.timeout as exc:
                self._drop()
                raise BackendTimeout(f"backend timed out: {exc}") from exc
            except (http.client.HTTPException, ConnectionError, OSError) as exc:
                self._drop()
                if attempt == 2:
                    raise BackendUnreachable(f"backend unreachable: {exc}") from exc
        raise AssertionError("unreachable")

    def _drop(self) -> None:
        conn = getattr(self._local, "conn", None)
        if conn is not None:
            try:
                conn.close()
            finally:
                self._local.conn = None


_UI_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".json": "application/json",
    ".svg": "image/svg+xml",
}


class GatewayCore:
    """The pipeline, independent of any particular HTTP listener.

    ``stage_hook(stage, request_id, detail)`` fires as each stage runs so
    tests can assert ordering and short-circuit behavior.
    """

    def __init__(
        self,
        config: GatewayConfig,
        *,
        credentials: CredentialStore,
        directory: DirectoryService,
        acl_holder: AclHolder,
        sessions: SessionStore,
        backend: Backend,
        tenant_defs=(),
        stage_hook: Callable[[str, str, dict], None] | None = None,
    ):
        self.config = config
        self.credentials = credentials
        self.directory = directory
        self.acl_holder = acl_holder
        self.sessions = sessions
        self.backend = backend
        self.tenant_defs = tuple(tenant_defs)
        self.stage_hook = stage_hook
        self._known_tenant_indices: set[str] = set()
        self._known_lock = threading.Lock()
        self._refresh_implicit_rules()

    # ------------------------------------------------------------------

    @classmethod
    def from_config(cls, config: GatewayConfig, *, store: MiniStore | None = None,
                    stage_hook=None) -> "GatewayCore":
        """Build all components from a config. ``backend: embedded`` creates
        (or adopts) an in-process store; a URL creates a remote forwarder."""
        if not config.auth.credentials_path:
            raise ConfigError("auth.credentials_path is required")
        if not config.directory.path:
            raise ConfigError("directory.path is required")
        if not config.acl.path:
            raise ConfigError("acl.path is required")
        credentials = CredentialStore.load(config.auth.credentials_path)
        directory = DirectoryService.from_file(
            config.directory.path, cache_ttl_secs=config.directory.cache_ttl_secs
        )
        acl_holder = AclHolder.from_file(config.acl.path)
        sessions = SessionStore(ttl_hours=config.tenant.session_ttl_hours)
        tenant_defs = load_tenant_defs(config.tenant.defs_path) if config.tenant.defs_path else ()
        if config.gateway.backend == "embedded":
            backend: Backend = EmbeddedBackend(
                store if store is not None else MiniStore(
                    oplog_path=config.store.oplog_path,
                    scroll_ttl_secs=config.store.scroll_ttl_secs,
                )
            )
        else:
            backend = RemoteBackend(config.gateway.backend, config.gateway.request_timeout_secs)
        return cls(
            config,
            credentials=credentials,
            directory=directory,
            acl_holder=acl_holder,
            sessions=sessions,
            backend=backend,
            tenant_defs=tenant_defs,
            stage_hook=stage_hook,
        )

    def _refresh_implicit_rules(self) -> None:
        rules = implicit_acl_rules(self.directory.directory, self.tenant_defs)
        self.acl_holder.set_implicit_rules(rules)

    def _stage(self, stage: str, request_id: str, **detail) -> None:
        if self.stage_hook is not None:
            self.stage_hook(stage, request_id, detail)

    # ------------------------------------------------------------------

    def handle(self, request: HttpRequest) -> HttpResponse:
        request_id = uuid.uuid4().hex[:12]
        try:
            response, set_cookie = self._pipeline(request, request_id)
        except AuthError as exc:
            response = error_response(exc.status, type(exc).__name__, str(exc))
            if exc.status == 401 and self.config.auth.mode == "basic":
                response = response.with_extra_headers(
                    [("WWW-Authenticate", 'Basic realm="searchgate"')]
                )
            set_cookie = None
        except UnknownRoute as exc:
            response, set_cookie = error_response(404, "UnknownRoute", str(exc)), None
        except (NoSession,) as exc:
            response, set_cookie = error_response(401, "NoSession", str(exc)), None
        except TenantError as exc:
            response, set_cookie = error_response(exc.status, type(exc).__name__, str(exc)), None
        except MalformedQuery as exc:
            response, set_cookie = error_response(400, "MalformedQuery", str(exc)), None
        except BackendTimeout as exc:
            response, set_cookie = error_response(504, "BackendTimeout", str(exc)), None
        except BackendUnreachable as exc:
            response, set_cookie = error_response(502, "BackendUnreachable", str(exc)), None
        except Exception:
            logger.exception("unhandled error in request %s", request_id)
            response, set_cookie = error_response(500, "InternalError", "internal error"), None
        extra: list[tuple[str, str]] = [(REQUEST_ID_HEADER, request_id)]
        if set_cookie:
            extra.append(("Set-Cookie", set_cookie))
        return response.with_extra_headers(extra)

    # ------------------------------------------------------------------

    def _pipeline(self, request: HttpRequest, request_id: str) -> tuple[HttpResponse, str | None]:
        cfg = self.config
        mode = AuthMethod(cfg.auth.mode)
        header = cfg.auth.header_name
        trusted_source = request.client_host in cfg.auth.trusted_proxies

        # 1. strip spoofed identity headers. In trusted-header mode the
        # identity header from the trusted listener IS the credential (set
        # by the front proxy, not the client) and must survive.
        if not (mode is AuthMethod.TRUSTED_HEADER and trusted_source):
            request = authmod.strip_spoofed_headers(request, header)
        self._stage("strip", request_id)

        # 2. authenticate (short-circuits with 401/403 before tenant/acl)
        principal = authmod.authenticate(
            request.headers,
            self.credentials,
            mode,
            header_name=header,
            allow_anonymous=cfg.auth.allow_anonymous,
            trusted_source=trusted_source,
        )
        self._stage("authenticate", request_id, username=principal.username)

        # 3. resolve groups
        groups = self.directory.groups_of(principal.username)
        self._stage("groups", request_id, groups=sorted(groups))

        # 4. session resolution
        session, set_cookie = self._resolve_session(request, principal)
        self._stage("session", request_id, session=bool(session))

        # self-service endpoints dispatch here (documented carve-out)
        path = request.path_only()
        if path == "/_ownhome/tenants" and request.method.upper() == "GET":
            return self._ownhome_tenants(principal, groups, session), set_cookie
        if path == "/_ownhome/switch" and request.method.upper() == "POST":
            return self._ownhome_switch(request, principal, groups, session), set_cookie
        if path == "/_ownhome/ui" or path.startswith("/_ownhome/ui/"):
            return self._serve_ui(path), set_cookie

        # 5. tenant index rewrite
        rewritten = rewrite_index(request, session, cfg.tenant.kibana_index)
        was_rewritten = rewritten.path != request.path
        request = rewritten
        self._stage("rewrite", request_id, rewritten=was_rewritten)
        if was_rewritten:
            self._ensure_tenant_index(request)

        # 6. action mapping on the post-rewrite request
        match = map_action(request.method, request.path)
        self._stage("map_action", request_id, route=match.route, index=match.index)

        # 7. authorization (deny by default); bulk bodies authorize every
        # distinct target index an action line names.
        table = self.acl_holder.table
        decision = self._authorize_request(table, principal, groups, match, request)
        self._stage(
            "authorize",
            request_id,
            allowed=decision.allowed,
            role=decision.matched_role,
            index=match.index,
        )
        if not decision.allowed:
            return (
                error_response(403, "Forbidden",
                               f"{principal.username!r} may not {match.action.value} "
                               f"{match.index or 'cluster'}"),
                set_cookie,
            )

        context = RequestContext(
            principal=principal,
            groups=groups,
            session_id=session.session_id if session else None,
            action=match.action,
            target_index=match.index,
            rewritten=was_rewritten,
        )

        if match.route == "POST /_acl/reload":
            return self._admin_reload(), set_cookie

        # 8. document-level filters on reads
        constraints = None
        if match.action is Action.READ and match.index is not None:
            constraints = aclmod.doc_filter_for(table, principal, groups, match.index)
            if constraints:
                request = self._apply_doc_filter(request, match, constraints)
            self._stage("doc_filter", request_id,
                        constraints=[(c.field, c.value) for c in constraints or ()])

        # 9. identity injection
        request = authmod.inject_identity(request, principal, header)
        self._stage("inject", request_id)

        # 10. forward
        response = self.backend.handle(request)
        self._stage("forward", request_id, status=response.status, context=context)

        if constraints and match.route == "GET /{index}/_doc/{id}":
            response = self._filter_doc_response(response, constraints)
        return response, set_cookie

    # ------------------------------------------------------------------
    # session handling

    def _resolve_session(self, request: HttpRequest, principal: Principal):
        """Returns (session or None, Set-Cookie value or None).

        First contact (no cookie) on a saved-objects or self-service route
        creates a session selecting the private tenant. A presented but
        dead cookie yields 401 on saved-objects routes until the client
        re-selects via /_ownhome/*, which always issues a fresh session.
        """
        cookie_header = request.headers.get("Cookie")
        token = None
        if cookie_header:
            jar = SimpleCookie()
            try:
                jar.load(cookie_header)
            except Exception:  # malformed cookie header: treat as absent
                jar = SimpleCookie()
            morsel = jar.get(SESSION_COOKIE)
            token = morsel.value if morsel else None
        session = self.sessions.get(token) if token else None
        if session is not None and session.username != principal.username:
            session = None  # a cookie minted for someone else never attaches

        path = request.path_only()
        is_ownhome = path.startswith("/_ownhome/")
        first_segment = path.split("/")[1] if "/" in path else ""
        is_saved_objects = first_segment == self.config.tenant.kibana_index

        if session is not None:
            return session, None
        if is_ownhome or (is_saved_objects and token is None):
            fresh = self.sessions.create(
                principal.username, Tenant(principal.username, TenantKind.PRIVATE)
            )
            cookie = f"{SESSION_COOKIE}={fresh.session_id}; Path=/; HttpOnly; SameSite=Lax"
            if self.config.gateway.tls_cert:
                cookie += "; Secure"
            return fresh, cookie
        if is_saved_objects:
            raise NoSession("session expired; re-select a tenant via /_ownhome/tenants")
        return None, None

    # ------------------------------------------------------------------
    # self-service endpoints

    def _tenant_names_known_anywhere(self) -> set[str]:
        names = set(self.directory.directory.groups)
        names.update(t.name for t in self.tenant_defs)
        names.update(self.credentials.usernames())
        return names

    def _ownhome_tenants(self, principal, groups, session) -> HttpResponse:
        tenants = available_tenants(principal, groups, self.tenant_defs)
        selected = session.selected_tenant if session else None
        payload = {
            "username": principal.username,
            "version": getattr(self.sessions, "_version", 0),
            "tenants": [
                {
                    "name": t.name,
                    "kind": t.kind.value,
                    "index": t.index_name,
                    "selected": selected is not None and t == selected,
                }
                for t in tenants
            ],
        }
        return json_response(200, payload)

    def _ownhome_switch(self, request, principal, groups, session) -> HttpResponse:
        try:
            body = request.json()
        except (json.JSONDecodeError, UnicodeDecodeError):
            return error_response(400, "MalformedBody", "switch body must be JSON")
        if not isinstance(body, dict) or not isinstance(body.get("tenant"), str):
            return error_response(400, "MalformedBody", 'switch body must be {"tenant": name}')
        tenants = available_tenants(principal, groups, self.tenant_defs)
        updated, version = self.sessions.apply_switch(
            session.session_id, body["tenant"], tenants, self._tenant_names_known_anywhere()
        )
        return json_response(
            200,
            {
                "selected": updated.selected_tenant.name,
                "index": updated.selected_tenant.index_name,
                "version": version,
            },
        )

    def _serve_ui(self, path: str) -> HttpResponse:
        root = self.config.gateway.ui_root
        if not root:
            return error_response(404, "NoUi", "no ui_root configured")
        rel = path[len("/_ownhome/ui"):].lstrip("/") or "index.html"
        base = Path(root).resolve()
        target = (base / rel).resolve()
        if not target.is_relative_to(base) or not target.is_file():
            return error_response(404, "NotFound", f"no ui file {rel!r}")
        content_type = _UI_CONTENT_TYPES.get(
            target.suffix, mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        )
        return HttpResponse(200, (("Content-Type", content_type),), target.read_bytes())

    # ------------------------------------------------------------------
    # authorization helpers

    def _authorize_request(self, table, principal, groups, match: RouteMatch,
                           request: HttpRequest) -> Decision:
        decision = aclmod.authorize(table, principal, groups, match.action, match.index)
        if not decision.allowed:
            return decision
        if match.route == "POST /{index}/_bulk":
            for target in self._bulk_targets(request, match.index):
                sub = aclmod.authorize(table, principal, groups, Action.WRITE, target)
                if not sub.allowed:
                    return Decision(False, None)
        return decision

    @staticmethod
    def _bulk_targets(request: HttpRequest, url_index: str | None) -> set[str]:
        docs = storeapi.parse_bulk_ndjson(request.body)
        targets = set()
        for _, _, override in docs:
            if override is not None:
                if not isinstance(override, str) or not _is_index_name(override):
                    raise MalformedQuery(f"illegal _index {override!r} in bulk action")
                targets.add(override)
        targets.discard(url_index)
        return targets

    # ------------------------------------------------------------------
    # doc filters

    def _apply_doc_filter(self, request: HttpRequest, match: RouteMatch, constraints):
        """Compose constraints into the query the backend will evaluate."""
        if match.route == "GET /{index}/_doc/{id}":
            return request  # enforced on the response instead
        try:
            body = request.json() or {}
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise MalformedQuery(f"body is not valid JSON: {exc}") from exc
        if not isinstance(body, dict):
            raise MalformedQuery("request body must be a JSON object")
        if match.route == "POST /{index}/_search/scroll" and "cursor" in body:
            return request  # constraints were bound when the scroll opened
        query = parse_query_json(body.get("query"))
        body["query"] = query_to_json(aclmod.compose_query(query, constraints))
        return request.with_body(json.dumps(body, separators=(",", ":")).encode("utf-8"))

    @staticmethod
    def _filter_doc_response(response: HttpResponse, constraints) -> HttpResponse:
        if response.status != 200:
            return response
        try:
            payload = response.json()
        except (json.JSONDecodeError, UnicodeDecodeError):
            return response
        fields = payload.get("fields", {}) if isinstance(payload, dict) else {}
        for constraint in constraints:
            if fields.get(constraint.field) != constraint.value:
                return error_response(404, "DocMissing", "no such document")
        return response

    # ------------------------------------------------------------------
    # admin

    def _admin_reload(self) -> HttpResponse:
        reloaded = []
        cfg = self.config
        if cfg.directory.path:
            self.directory.reload(cfg.directory.path)
            reloaded.append("directory")
        if cfg.auth.credentials_path:
            self.credentials.reload(cfg.auth.credentials_path)
            reloaded.append("credentials")
        if cfg.tenant.defs_path:
            self.tenant_defs = load_tenant_defs(cfg.tenant.defs_path)
            reloaded.append("tenant_defs")
        table = self.acl_holder.reload(cfg.acl.path) if cfg.acl.path else self.acl_holder.table
        reloaded.append("acl")
        self._refresh_implicit_rules()
        return json_response(200, {"reloaded": reloaded, "generation": table.generation})

    # ------------------------------------------------------------------

    def _ensure_tenant_index(self, request: HttpRequest) -> None:
        """Create the tenant's backend index lazily on first rewritten access."""
        index = request.path_only().split("/")[1]
        with self._known_lock:
            if index in self._known_tenant_indices:
                return
        response = self.backend.handle(
            HttpRequest(method="PUT", path=f"/{index}", headers=Headers(), body=b"")
        )
        if response.status == 200:
            with self._known_lock:
                self._known_tenant_indices.add(index)
        else:  # pragma: no cover - backend refused index creation
            logger.warning("could not ensure tenant index %s: %s", index, response.status)
