"""Pattern-based access control with per-user variables and document filters.

Rules are an allow-list: a request is permitted iff at least one rule
matches the principal (directly or through a group), the action, and the
target index after variable expansion. There are no deny rules and rule
order carries no meaning, so adding a rule can only widen access.
Matching read rules may also contribute document-level constraints that
the gateway conjoins into search queries.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path

from .auth import AuthMethod, Principal
from .query import Query, Scalar, Term, and_query


class Action(str, Enum):
    READ = "read"
    WRITE = "write"
    DELETE = "delete"
    MANAGE = "manage"
    CLUSTER_MONITOR = "cluster_monitor"
    CLUSTER_ADMIN = "cluster_admin"


INDEX_ACTIONS = frozenset({Action.READ, Action.WRITE, Action.DELETE, Action.MANAGE})
CLUSTER_ACTIONS = frozenset({Action.CLUSTER_MONITOR, Action.CLUSTER_ADMIN})

USER_NAME_VARIABLE = "${user.name}"
_VARIABLE_RE = re.compile(r"\$\{([^}]*)\}")
_TOKEN_RE = re.compile(r"^[a-zA-Z0-9_.\-]+$")


class AclError(Exception):
    pass


class AclParseError(AclError):
    pass


class InvalidPattern(AclError):
    pass


class UnknownVariable(AclError):
    """A ``${...}`` other than ``${user.name}``, or an unterminated one."""


@dataclass(frozen=True)
class FieldConstraint:
    """Equality constraint on one document field; lists conjoin."""

    field: str
    value: Scalar

    def __post_init__(self):
        if not self.field or not _TOKEN_RE.match(self.field):
            raise AclParseError(f"doc_filter field must be a token, got {self.field!r}")


@dataclass(frozen=True)
class AclRule:
    role_name: str
    principals: frozenset[str]
    index_patterns: tuple[str, ...]
    actions: frozenset[Action]
    doc_filter: tuple[FieldConstraint, ...] = ()


@dataclass(frozen=True)
class AclTable:
    rules: tuple[AclRule, ...] = ()
    generation: int = 0


@dataclass(frozen=True)
class Decision:
    allowed: bool
    matched_role: str | None = None


def expand_variables(pattern: str, principal: Principal) -> str:
    """Replace every ``${user.name}`` with the principal's username.

    Identity on variable-free patterns; any other variable, or an
    unterminated ``${``, raises UnknownVariable.
    """
    for match in _VARIABLE_RE.finditer(pattern):
        if match.group(1) != "user.name":
            raise UnknownVariable(f"unknown variable ${{{match.group(1)}}} in {pattern!r}")
    expanded = pattern.replace(USER_NAME_VARIABLE, principal.username)
    if "${" in expanded:
        raise UnknownVariable(f"unterminated variable in {pattern!r}")
    return expanded


@lru_cache(maxsize=4096)
def _compile_glob(pattern: str) -> re.Pattern:
    """Compile the two-wildcard glob dialect (* and ? only) to a regex."""
    out = []
    for ch in pattern:
        if ch == "*":
            out.append(".*")
        elif ch == "?":
            out.append(".")
        else:
            out.append(re.escape(ch))
    return re.compile("".join(out) + r"\Z")


def glob_match(pattern: str, name: str) -> bool:
    return bool(_compile_glob(pattern).match(name))


def _principal_matches(rule: AclRule, principal: Principal, groups: frozenset[str]) -> bool:
    for entry in rule.principals:
        if entry.startswith("g:"):
            group_pat = entry[2:]
            if any(glob_match(group_pat, g) for g in groups):
                return True
        elif glob_match(entry, principal.username):
            return True
    return False


def _index_matches(rule: AclRule, principal: Principal, index: str) -> bool:
    for pattern in rule.index_patterns:
        if glob_match(expand_variables(pattern, principal), index):
            return True
    return False


def _rule_matches(
    rule: AclRule,
    principal: Principal,
    groups: frozenset[str],
    action: Action,
    index: str | None,
) -> bool:
    if action not in rule.actions:
        return False
    if not _principal_matches(rule, principal, groups):
        return False
    if action in CLUSTER_ACTIONS:
        return True  # cluster operations carry no index
    if index is None:
        return False
    return _index_matches(rule, principal, index)


def authorize(
    table: AclTable,
    principal: Principal,
    groups: frozenset[str],
    action: Action,
    index: str | None,
) -> Decision:
    """Deny-by-default evaluation; any matching rule allows."""
    for rule in table.rules:
        if _rule_matches(rule, principal, groups, action, index):
            return Decision(True, rule.role_name)
    return Decision(False, None)


def doc_filter_for(
    table: AclTable,
    principal: Principal,
    groups: frozenset[str],
    index: str,
) -> tuple[FieldConstraint, ...] | None:
    """Conjunction of doc filters from every matching read rule.

    Returns None when no matching rule carries a filter. Constraints are
    deduplicated and ordered by (field, value) so composition is
    deterministic.
    """
    collected: set[FieldConstraint] = set()
    found = False
    for rule in table.rules:
        if _rule_matches(rule, principal, groups, Action.READ, index) and rule.doc_filter:
            found = True
            collected.update(rule.doc_filter)
    if not found:
        return None
    return tuple(sorted(collected, key=lambda c: (c.field, str(c.value))))


def compose_query(query: Query, constraints: tuple[FieldConstraint, ...] | list[FieldConstraint]) -> Query:
    """AND the query with one exact-match term per constraint.

    Identity when the constraint list is empty; hits of the result are
    exactly the hits of *query* that satisfy every constraint.
    """
    if not constraints:
        return query
    terms = [Term(c.field, c.value) for c in constraints]
    return and_query([query, *terms])


_PROBE = Principal("probe", AuthMethod.BASIC)

_VALID_ACTIONS = {a.value: a for a in Action}


def parse_acl(obj, *, source: str = "<acl>", generation: int = 0) -> AclTable:
    """Validate the documented ACL JSON shape into a table.

    Fail-fast: pattern variables, glob syntax, action names, duplicate
    role names, and doc_filter shapes are all checked at load time so a
    bad table never activates.
    """
    if not isinstance(obj, dict) or not isinstance(obj.get("roles"), list):
        raise AclParseError(f"{source}: expected top-level {{\"roles\": [...]}}")
    rules: list[AclRule] = []
    seen: set[str] = set()
    for i, role in enumerate(obj["roles"]):
        where = f"{source}: roles[{i}]"
        if not isinstance(role, dict):
            raise AclParseError(f"{where}: role must be an object")
        name = role.get("name")
        if not isinstance(name, str) or not _TOKEN_RE.match(name):
            raise AclParseError(f"{where}: role name must be a token")
        if name in seen:
            raise AclParseError(f"{where}: duplicate role name {name!r}")
        seen.add(name)

        principals = role.get("principals")
        if not isinstance(principals, list) or not principals:
            raise AclParseError(f"{where}: principals must be a non-empty list")
        for p in principals:
            bare = p[2:] if isinstance(p, str) and p.startswith("g:") else p
            if not isinstance(bare, str) or not re.match(r"^[a-zA-Z0-9_.\-*?]+$", bare):
                raise AclParseError(f"{where}: illegal principal entry {p!r}")

        patterns = role.get("index_patterns", [])
        if not isinstance(patterns, list):
            raise AclParseError(f"{where}: index_patterns must be a list")
        for pattern in patterns:
            if not isinstance(pattern, str) or not pattern:
                raise AclParseError(f"{where}: index pattern must be a non-empty string")
            expanded = expand_variables(pattern, _PROBE)  # raises UnknownVariable
            if not re.match(r"^[a-zA-Z0-9_.\-*?]+$", expanded):
                raise InvalidPattern(f"{where}: illegal characters in pattern {pattern!r}")

        actions_raw = role.get("actions")
        if not isinstance(actions_raw, list) or not actions_raw:
            raise AclParseError(f"{where}: actions must be a non-empty list")
        actions = set()
        for a in actions_raw:
            if a not in _VALID_ACTIONS:
                raise AclParseError(f"{where}: unknown action {a!r}")
            actions.add(_VALID_ACTIONS[a])

        doc_filter_obj = role.get("doc_filter") or {}
        if not isinstance(doc_filter_obj, dict):
            raise AclParseError(f"{where}: doc_filter must be an object")
        constraints = []
        for fname, value in sorted(doc_filter_obj.items(), key=lambda kv: (kv[0], str(kv[1]))):
            if not isinstance(value, (str, int, float, bool)):
                raise AclParseError(f"{where}: doc_filter value for {fname!r} must be scalar")
            try:
                constraints.append(FieldConstraint(fname, value))
            except AclParseError as exc:
                raise AclParseError(f"{where}: {exc}") from exc

        rules.append(
            AclRule(
                role_name=name,
                principals=frozenset(principals),
                index_patterns=tuple(patterns),
                actions=frozenset(actions),
                doc_filter=tuple(constraints),
            )
        )
    return AclTable(rules=tuple(rules), generation=generation)


def load_acl(path: str | Path, *, generation: int = 0) -> AclTable:
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AclParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return parse_acl(obj, source=str(path), generation=generation)


class AclHolder:
    """Active table with implicit tenant rules prepended; atomic reload.

    The effective table is ``implicit_rules + loaded rules`` and is
    rebuilt as one immutable object whenever either side changes, so
    concurrent authorize calls always see a complete table.
    """

    def __init__(self, table: AclTable, *, path: str | Path | None = None,
                 implicit_rules: tuple[AclRule, ...] = ()):
        self._path = str(path) if path is not None else None
        self._loaded = table
        self._implicit = tuple(implicit_rules)
        self._lock = threading.Lock()
        self._effective = self._build()

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> "AclHolder":
        return cls(load_acl(path), path=path, **kwargs)

    def _build(self) -> AclTable:
        return AclTable(
            rules=self._implicit + self._loaded.rules,
            generation=self._loaded.generation,
        )

    @property
    def table(self) -> AclTable:
        return self._effective

    def reload(self, path: str | Path | None = None) -> AclTable:
        src = path if path is not None else self._path
        if src is None:
            raise AclError("no acl path configured for reload")
        with self._lock:
            self._loaded = load_acl(src, generation=self._loaded.generation + 1)
            self._effective = self._build()
        return self._effective

    def set_implicit_rules(self, rules: tuple[AclRule, ...]) -> None:
        with self._lock:
            self._implicit = tuple(rules)
            self._effective = self._build()
