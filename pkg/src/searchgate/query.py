"""Query AST, tokenizer, and the JSON wire shape queries travel in.

Four constructors cover the search behaviors the store supports: match
all, exact-value term match, positional phrase match over tokenized text,
and conjunction. Scroll pagination and expression ranking wrap these at
the request level rather than inside the AST.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

Scalar = Union[str, int, float, bool]


class MalformedQuery(ValueError):
    """Query JSON that does not parse into a known constructor."""


def tokenize(text: str) -> list[str]:
    """Lowercase + split on Unicode whitespace. Deterministic, no stemming."""
    return text.lower().split()


@dataclass(frozen=True)
class MatchAll:
    pass


@dataclass(frozen=True)
class Term:
    field: str
    value: Scalar


@dataclass(frozen=True)
class Phrase:
    field: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class And:
    children: tuple["Query", ...]


Query = Union[MatchAll, Term, Phrase, And]


def phrase(field: str, text: str) -> Phrase:
    return Phrase(field, tuple(tokenize(text)))


def and_query(children) -> Query:
    """Conjunction with nested Ands flattened; drops redundant MatchAlls."""
    flat: list[Query] = []
    for child in children:
        if isinstance(child, And):
            flat.extend(child.children)
        elif isinstance(child, MatchAll):
            continue
        else:
            flat.append(child)
    if not flat:
        return MatchAll()
    if len(flat) == 1:
        return flat[0]
    return And(tuple(flat))


def parse_query_json(obj) -> Query:
    """Parse the documented JSON query shape into an AST.

    Shapes: ``{"match_all": {}}``, ``{"term": {"field": f, "value": v}}``,
    ``{"phrase": {"field": f, "text": s}}``, ``{"and": [q, ...]}``.
    ``None`` parses as match-all.
    """
    if obj is None:
        return MatchAll()
    if not isinstance(obj, dict) or len(obj) != 1:
        raise MalformedQuery(f"query must be a single-key object, got {obj!r}")
    kind, payload = next(iter(obj.items()))
    if kind == "match_all":
        if payload not in ({}, None):
            raise MalformedQuery("match_all takes no arguments")
        return MatchAll()
    if kind == "term":
        if not isinstance(payload, dict) or set(payload) != {"field", "value"}:
            raise MalformedQuery("term needs {field, value}")
        field, value = payload["field"], payload["value"]
        if not isinstance(field, str) or not field:
            raise MalformedQuery("term field must be a non-empty string")
        if not isinstance(value, (str, int, float, bool)):
            raise MalformedQuery("term value must be a scalar")
        return Term(field, value)
    if kind == "phrase":
        if not isinstance(payload, dict) or set(payload) != {"field", "text"}:
            raise MalformedQuery("phrase needs {field, text}")
        field, text = payload["field"], payload["text"]
        if not isinstance(field, str) or not field:
            raise MalformedQuery("phrase field must be a non-empty string")
        if not isinstance(text, str) or not tokenize(text):
            raise MalformedQuery("phrase text must contain at least one token")
        return phrase(field, text)
    if kind == "and":
        if not isinstance(payload, list):
            raise MalformedQuery("and needs a list of queries")
        return and_query([parse_query_json(child) for child in payload])
    raise MalformedQuery(f"unknown query kind {kind!r}")


def query_to_json(q: Query):
    if isinstance(q, MatchAll):
        return {"match_all": {}}
    if isinstance(q, Term):
        return {"term": {"field": q.field, "value": q.value}}
    if isinstance(q, Phrase):
        return {"phrase": {"field": q.field, "text": " ".join(q.tokens)}}
    if isinstance(q, And):
        return {"and": [query_to_json(c) for c in q.children]}
    raise TypeError(f"not a query: {q!r}")


def canonical_query_key(q: Query | None) -> str:
    """Stable string key for caching; None keys the all-documents case."""
    if q is None:
        return "*"
    return json.dumps(query_to_json(q), sort_keys=True, separators=(",", ":"))
