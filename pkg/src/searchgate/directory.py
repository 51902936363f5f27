"""Username -> groups resolution from a file-backed directory.

Stands in for an LDAP server: a JSON file declares groups and their
members, and lookups resolve a user's group set. Each load produces an
immutable snapshot; reload swaps snapshots atomically so concurrent
lookups never observe a half-loaded directory.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from .auth import InvalidUsername, normalize_username


class DirectoryError(Exception):
    pass


class DirectoryParseError(DirectoryError):
    """Malformed directory file; the message carries file/line context."""


class DanglingGroupReference(DirectoryError):
    """A membership entry names a group that is never declared."""


@dataclass(frozen=True)
class Directory:
    """Immutable snapshot of group memberships."""

    memberships: Mapping[str, frozenset[str]]
    groups: frozenset[str]
    loaded_at: float
    generation: int = 0


def parse_directory(obj: dict, *, source: str = "<directory>", generation: int = 0) -> Directory:
    """Validate and freeze a parsed directory document.

    Shape: ``{"groups": {name: [member, ...]}, "memberships": {user: [group, ...]}}``
    where the ``memberships`` section is optional and every group it
    references must be declared under ``groups``.
    """
    if not isinstance(obj, dict):
        raise DirectoryParseError(f"{source}: top level must be an object")
    groups_obj = obj.get("groups", {})
    if not isinstance(groups_obj, dict):
        raise DirectoryParseError(f"{source}: 'groups' must be an object")

    memberships: dict[str, set[str]] = {}
    declared: set[str] = set()
    for group_name, members in groups_obj.items():
        try:
            group = normalize_username(group_name)
        except InvalidUsername as exc:
            raise DirectoryParseError(f"{source}: illegal group name {group_name!r}") from exc
        declared.add(group)
        if not isinstance(members, list):
            raise DirectoryParseError(f"{source}: members of {group!r} must be a list")
        for member in members:
            try:
                user = normalize_username(str(member))
            except InvalidUsername as exc:
                raise DirectoryParseError(f"{source}: illegal member {member!r} in {group!r}") from exc
            memberships.setdefault(user, set()).add(group)

    extra = obj.get("memberships", {})
    if not isinstance(extra, dict):
        raise DirectoryParseError(f"{source}: 'memberships' must be an object")
    for user_name, group_list in extra.items():
        try:
            user = normalize_username(user_name)
        except InvalidUsername as exc:
            raise DirectoryParseError(f"{source}: illegal username {user_name!r}") from exc
        if not isinstance(group_list, list):
            raise DirectoryParseError(f"{source}: memberships of {user!r} must be a list")
        for group_name in group_list:
            group = normalize_username(str(group_name))
            if group not in declared:
                raise DanglingGroupReference(
                    f"{source}: user {user!r} references undeclared group {group!r}"
                )
            memberships.setdefault(user, set()).add(group)

    frozen = {u: frozenset(gs) for u, gs in memberships.items()}
    return Directory(
        memberships=MappingProxyType(frozen),
        groups=frozenset(declared),
        loaded_at=time.time(),
        generation=generation,
    )


def load_directory(path: str | Path, *, generation: int = 0) -> Directory:
    """Parse and validate a directory file; nothing is kept on error."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DirectoryParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return parse_directory(obj, source=str(path), generation=generation)


def groups_of(directory: Directory, username: str) -> frozenset[str]:
    """Groups of *username*; unknown users resolve to the empty set."""
    return directory.memberships.get(username, frozenset())


class DirectoryService:
    """Current directory snapshot plus a per-(generation, user) TTL cache.

    The cache models the cost profile of a remote directory: lookups are
    memoized for ``cache_ttl_secs`` and the TTL is bypassable (ttl <= 0)
    when measurements need uncached behavior.
    """

    def __init__(
        self,
        directory: Directory,
        *,
        path: str | Path | None = None,
        cache_ttl_secs: float = 30.0,
        clock=time.monotonic,
    ):
        self._directory = directory
        self._path = str(path) if path is not None else None
        self.cache_ttl_secs = cache_ttl_secs
        self._clock = clock
        self._cache: dict[tuple[int, str], tuple[float, frozenset[str]]] = {}
        self._cache_lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> "DirectoryService":
        return cls(load_directory(path), path=path, **kwargs)

    @property
    def directory(self) -> Directory:
        return self._directory

    def reload(self, path: str | Path | None = None) -> Directory:
        """Load a new snapshot and swap it in atomically."""
        src = path if path is not None else self._path
        if src is None:
            raise DirectoryError("no directory path configured for reload")
        new = load_directory(src, generation=self._directory.generation + 1)
        self._directory = new
        with self._cache_lock:
            self._cache.clear()
        return new

    def groups_of(self, username: str) -> frozenset[str]:
        snapshot = self._directory
        if self.cache_ttl_secs <= 0:
            return groups_of(snapshot, username)
        key = (snapshot.generation, username)
        now = self._clock()
        with self._cache_lock:
            hit = self._cache.get(key)
            if hit is not None and hit[0] > now:
                return hit[1]
        result = groups_of(snapshot, username)
        with self._cache_lock:
            self._cache[key] = (now + self.cache_ttl_secs, result)
            if len(self._cache) > 4096:
                self._cache = {k: v for k, v in self._cache.items() if v[0] > now}
        return result
