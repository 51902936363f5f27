"""Minimal HTTP message primitives shared by the gateway, the store API,
and the bundled clients.

Headers are an ordered multi-map that preserves the original casing of
names while matching them case-insensitively, so the gateway can strip or
replace identity headers without disturbing any other header byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator


class Headers:
    """Ordered, case-insensitive HTTP header multi-map."""

    __slots__ = ("_items",)

    def __init__(self, items: Iterable[tuple[str, str]] = ()):
        self._items: list[tuple[str, str]] = [(str(n), str(v)) for n, v in items]

    def add(self, name: str, value: str) -> None:
        self._items.append((name, value))

    def get(self, name: str) -> str | None:
        """First value for *name*, or None."""
        low = name.lower()
        for n, v in self._items:
            if n.lower() == low:
                return v
        return None

    def get_all(self, name: str) -> list[str]:
        low = name.lower()
        return [v for n, v in self._items if n.lower() == low]

    def remove_all(self, name: str) -> int:
        """Remove every occurrence of *name* (any casing). Returns count removed."""
        low = name.lower()
        kept = [(n, v) for n, v in self._items if n.lower() != low]
        removed = len(self._items) - len(kept)
        self._items = kept
        return removed

    def set(self, name: str, value: str) -> None:
        """Replace all occurrences of *name* with a single header."""
        self.remove_all(name)
        self._items.append((name, value))

    def items(self) -> list[tuple[str, str]]:
        return list(self._items)

    def copy(self) -> "Headers":
        return Headers(self._items)

    def __iter__(self) -> Iterator[tuple[str, str]]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, name: object) -> bool:
        return isinstance(name, str) and self.get(name) is not None

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Headers) and self._items == other._items

    def __repr__(self) -> str:
        return f"Headers({self._items!r})"


@dataclass(frozen=True)
class HttpRequest:
    """One inbound or outbound HTTP request.

    ``path`` is the raw request target including any query string.
    ``client_host`` is the peer address as seen by the listener ("" for
    synthetic in-process requests).
    """

    method: str
    path: str
    headers: Headers = field(default_factory=Headers)
    body: bytes = b""
    client_host: str = ""
    scheme: str = "http"

    def path_only(self) -> str:
        return self.path.split("?", 1)[0]

    def query_string(self) -> str:
        parts = self.path.split("?", 1)
        return parts[1] if len(parts) == 2 else ""

    def with_headers(self, headers: Headers) -> "HttpRequest":
        return replace(self, headers=headers)

    def with_path(self, path: str) -> "HttpRequest":
        return replace(self, path=path)

    def with_body(self, body: bytes) -> "HttpRequest":
        return replace(self, body=body)

    def json(self):
        if not self.body:
            return None
        return json.loads(self.body.decode("utf-8"))


@dataclass(frozen=True)
class HttpResponse:
    status: int
    headers: tuple[tuple[str, str], ...] = ()
    body: bytes = b""

    def json(self):
        if not self.body:
            return None
        return json.loads(self.body.decode("utf-8"))

    def header(self, name: str) -> str | None:
        low = name.lower()
        for n, v in self.headers:
            if n.lower() == low:
                return v
        return None

    def with_extra_headers(self, extra: Iterable[tuple[str, str]]) -> "HttpResponse":
        return replace(self, headers=self.headers + tuple(extra))


def json_response(status: int, payload, extra_headers: Iterable[tuple[str, str]] = ()) -> HttpResponse:
    body = json.dumps(payload, separators=(",", ":")).encode("utf-8")
    headers = (("Content-Type", "application/json"),) + tuple(extra_headers)
    return HttpResponse(status=status, headers=headers, body=body)


def error_response(status: int, error_type: str, reason: str) -> HttpResponse:
    return json_response(status, {"error": {"type": error_type, "reason": reason}})


# Hop-by-hop headers never forwarded by a proxy (RFC 9110 §7.6.1).
HOP_BY_HOP = frozenset({
    "connection",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
})
