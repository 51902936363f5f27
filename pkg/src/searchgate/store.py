"""Embedded in-memory search backend.

Models the minimum a search engine needs for the gateway and the bench to
be exercised end to end: per-index document storage with an exact-value
index and a positional token index, batch writes that become searchable on
return, grouped sums with a generation-checked result cache, snapshot-
isolated scroll cursors, and expression ranking.

Writes commit copy-on-write snapshots: readers always see a whole
committed generation, never a partially applied batch, and a scroll
cursor's snapshot stays exact no matter what is written after it opened.
"""

from __future__ import annotations

import json
import logging
import re
import secrets
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .expr import Expr, evaluate_columns, expr_fields, parse_expr
from .query import (
    And,
    MalformedQuery,
    MatchAll,
    Phrase,
    Query,
    Scalar,
    Term,
    canonical_query_key,
    tokenize,
)

logger = logging.getLogger(__name__)

DEFAULT_SCROLL_TTL_SECS = 60.0
DEFAULT_SEARCH_LIMIT = 10

_INDEX_NAME_RE = re.compile(r"^[a-z0-9_.\-]+$")
_DOC_ID_RE = re.compile(r"^[A-Za-z0-9_.:\-]+$")
_FIELD_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class StoreError(Exception):
    status = 400


class IndexMissing(StoreError):
    status = 404


class IndexExists(StoreError):
    status = 400


class InvalidIndexName(StoreError):
    status = 400


class MalformedDocument(StoreError):
    status = 400


class EmptyBatch(StoreError):
    status = 400


class TypeConflict(StoreError):
    """Field written with a different type family than the index mapping."""

    status = 400


class FieldMissing(StoreError):
    status = 400


class NonNumericField(StoreError):
    status = 400


class CursorUnknown(StoreError):
    status = 404


class CursorExpired(StoreError):
    status = 404


def _family(value: Scalar) -> str:
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, (int, float)):
        return "numeric"
    if isinstance(value, str):
        return "string"
    raise MalformedDocument(f"field values must be scalars, got {type(value).__name__}")


def _as_number(value) -> float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    return 0.0


@dataclass(frozen=True)
class Document:
    id: str
    fields: Mapping[str, Scalar]

    @cached_property
    def payload_json(self) -> str:
        """Serialized hit fragment, computed once per document.

        Documents are immutable and shared across snapshots, so the hot
        read paths (scroll pages, search hits) can splice these cached
        fragments instead of re-serializing fields on every request.
        """
        return json.dumps({"_id": self.id, "fields": dict(self.fields)},
                          separators=(",", ":"))


@dataclass(frozen=True)
class _Posting:
    ids: tuple[str, ...]  # sorted ascending
    positions: Mapping[str, tuple[int, ...]]


@dataclass(frozen=True)
class _Snapshot:
    """One committed generation of an index. Never mutated after commit."""

    generation: int
    docs: Mapping[str, Document]
    ids_sorted: tuple[str, ...]
    exact: Mapping[str, Mapping[Scalar, tuple[str, ...]]]
    tokens: Mapping[str, Mapping[str, _Posting]]
    field_types: Mapping[str, str]


_EMPTY_SNAPSHOT = _Snapshot(0, {}, (), {}, {}, {})


@dataclass(frozen=True)
class SearchResult:
    total: int
    docs: tuple[Document, ...]


@dataclass(frozen=True)
class ExpressionResult:
    total: int
    docs: tuple[Document, ...]
    values: tuple[float, ...]
    warnings: Mapping[str, int]


class Exhausted:
    """Sentinel page marker: the cursor has no documents left."""

    def __repr__(self) -> str:  # pragma: no cover
        return "Exhausted"


EXHAUSTED = Exhausted()


@dataclass
class _Cursor:
    index: str
    docs: Mapping[str, Document]
    ids: Sequence[str]
    page_size: int
    pos: int
    expires_at: float


class _Index:
    def __init__(self, name: str):
        self.name = name
        self.snapshot = _EMPTY_SNAPSHOT
        self.write_lock = threading.Lock()
        self.agg_cache: OrderedDict[str, tuple[int, dict]] = OrderedDict()
        self.agg_cache_lock = threading.Lock()
        self.columns: dict | None = None  # generation-tagged numeric column cache
        self.columns_lock = threading.Lock()


def _validate_doc(doc_id: str | None, fields: Mapping[str, Scalar]) -> tuple[str, dict]:
    if doc_id is None:
        doc_id = secrets.token_hex(12)
    if not isinstance(doc_id, str) or not _DOC_ID_RE.match(doc_id):
        raise MalformedDocument(f"illegal document id {doc_id!r}")
    if not isinstance(fields, Mapping):
        raise MalformedDocument("document fields must be an object")
    clean: dict[str, Scalar] = {}
    for name, value in fields.items():
        if not isinstance(name, str) or not _FIELD_NAME_RE.match(name):
            raise MalformedDocument(f"illegal field name {name!r}")
        _family(value)  # raises on non-scalars
        clean[name] = value
    return doc_id, clean


def _top_rows_desc(values: np.ndarray, limit: int | None) -> np.ndarray:
    """Row indices ordered by value descending, ties by row (= id) ascending.

    For small limits this selects the exact top-k via a partition instead
    of sorting the whole column: rows strictly above the k-th value, then
    boundary-value rows in ascending row order until k is reached.
    """
    n = len(values)
    if limit is None or limit >= n:
        return np.argsort(-values, kind="stable")
    if limit <= 0:
        return np.empty(0, dtype=np.intp)
    neg = -values
    kth = np.partition(neg, limit - 1)[limit - 1]
    rows = np.flatnonzero(neg < kth)
    ties = np.flatnonzero(neg == kth)
    rows = np.concatenate([rows, ties[: limit - len(rows)]])
    return rows[np.lexsort((rows, neg[rows]))]


def _merge_sorted(base: tuple[str, ...], additions: list[str],
                  removals: set[str] | None = None) -> tuple[str, ...]:
    if removals:
        base = tuple(x for x in base if x not in removals)
    if not additions:
        return base
    return tuple(sorted(base + tuple(additions)))


class MiniStore:
    """Thread-safe multi-index store.

    Reads run lock-free against the current snapshot; writes serialize per
    index and swap in a new snapshot, bumping the generation once per
    committed batch. An optional append-only operation log makes runs
    replayable across restarts.
    """

    def __init__(self, *, oplog_path: str | Path | None = None,
                 scroll_ttl_secs: float = DEFAULT_SCROLL_TTL_SECS,
                 clock=time.monotonic):
        self._indices: dict[str, _Index] = {}
        self._lock = threading.RLock()
        self._cursors: dict[str, _Cursor] = {}
        self._cursor_lock = threading.Lock()
        self.scroll_ttl_secs = scroll_ttl_secs
        self._clock = clock
        self._oplog_path = Path(oplog_path) if oplog_path else None
        self._oplog_file = None
        self._oplog_lock = threading.Lock()
        if self._oplog_path is not None:
            self._replay_oplog()
            self._oplog_file = open(self._oplog_path, "a", encoding="utf-8")

    # ------------------------------------------------------------------
    # index lifecycle

    def create_index(self, name: str) -> bool:
        """Create *name*; returns False if it already existed."""
        if not _INDEX_NAME_RE.match(name):
            raise InvalidIndexName(f"illegal index name {name!r}")
        with self._lock:
            if name in self._indices:
                return False
            self._indices[name] = _Index(name)
        self._log({"op": "create_index", "index": name})
        return True

    def delete_index(self, name: str) -> None:
        with self._lock:
            if name not in self._indices:
                raise IndexMissing(f"no such index {name!r}")
            del self._indices[name]
        self._log({"op": "delete_index", "index": name})

    def index_exists(self, name: str) -> bool:
        return name in self._indices

    def list_indices(self) -> list[str]:
        with self._lock:
            return sorted(self._indices)

    def _index(self, name: str) -> _Index:
        idx = self._indices.get(name)
        if idx is None:
            raise IndexMissing(f"no such index {name!r}")
        return idx

    def stats(self) -> dict:
        with self._lock:
            indices = {name: len(idx.snapshot.docs) for name, idx in self._indices.items()}
        return {
            "status": "green",
            "indices": indices,
            "total_docs": sum(indices.values()),
        }

    # ------------------------------------------------------------------
    # writes

    def bulk_index(self, index: str, docs: Iterable[tuple[str | None, Mapping[str, Scalar]]]) -> int:
        """All-or-nothing batch write; documents are searchable on return.

        Duplicate ids within a batch resolve last-write-wins; the returned
        count is the number of writes in the batch.
        """
        batch = [_validate_doc(doc_id, fields) for doc_id, fields in docs]
        if not batch:
            raise EmptyBatch("bulk batch must contain at least one document")
        idx = self._index(index)
        with idx.write_lock:
            snap = idx.snapshot
            self._check_types(snap, batch)
            idx.snapshot = self._commit(snap, batch)
        self._log({"op": "bulk", "index": index, "docs": [[d, f] for d, f in batch]})
        return len(batch)

    def put_doc(self, index: str, doc_id: str, fields: Mapping[str, Scalar]) -> str:
        """Single-document write; returns "created" or "updated"."""
        existed = doc_id in self._index(index).snapshot.docs
        self.bulk_index(index, [(doc_id, fields)])
        return "updated" if existed else "created"

    @staticmethod
    def _check_types(snap: _Snapshot, batch: list[tuple[str, dict]]) -> None:
        types = dict(snap.field_types)
        for _, fields in batch:
            for name, value in fields.items():
                fam = _family(value)
                known = types.get(name)
                if known is None:
                    types[name] = fam
                elif known != fam:
                    raise TypeConflict(
                        f"field {name!r} is {known} in the index mapping, got {fam}"
                    )

    @staticmethod
    def _commit(snap: _Snapshot, batch: list[tuple[str, dict]]) -> _Snapshot:
        # last-write-wins inside the batch
        merged: dict[str, dict] = {}
        for doc_id, fields in batch:
            merged[doc_id] = fields

        new_docs = dict(snap.docs)
        new_types = dict(snap.field_types)
        added_ids: list[str] = []
        exact_add: dict[str, dict[Scalar, list[str]]] = {}
        exact_del: dict[str, dict[Scalar, set[str]]] = {}
        token_add: dict[str, dict[str, dict[str, tuple[int, ...]]]] = {}
        token_del: dict[str, dict[str, set[str]]] = {}

        for doc_id, fields in merged.items():
            old = new_docs.get(doc_id)
            if old is not None:
                for name, value in old.fields.items():
                    exact_del.setdefault(name, {}).setdefault(value, set()).add(doc_id)
                    if isinstance(value, str):
                        for token in set(tokenize(value)):
                            token_del.setdefault(name, {}).setdefault(token, set()).add(doc_id)
            else:
                added_ids.append(doc_id)
            new_docs[doc_id] = Document(doc_id, MappingProxyType(dict(fields)))
            for name, value in fields.items():
                new_types.setdefault(name, _family(value))
                exact_add.setdefault(name, {}).setdefault(value, []).append(doc_id)
                if isinstance(value, str):
                    positions: dict[str, list[int]] = {}
                    for pos, token in enumerate(tokenize(value)):
                        positions.setdefault(token, []).append(pos)
                    for token, plist in positions.items():
                        token_add.setdefault(name, {}).setdefault(token, {})[doc_id] = tuple(plist)

        new_exact: dict[str, Mapping[Scalar, tuple[str, ...]]] = dict(snap.exact)
        for name in set(exact_add) | set(exact_del):
            values = dict(snap.exact.get(name, {}))
            dels = exact_del.get(name, {})
            adds = exact_add.get(name, {})
            for value in set(adds) | set(dels):
                ids = _merge_sorted(
                    values.get(value, ()),
                    sorted(adds.get(value, [])),
                    dels.get(value),
                )
                if ids:
                    values[value] = ids
                else:
                    values.pop(value, None)
            new_exact[name] = values

        new_tokens: dict[str, Mapping[str, _Posting]] = dict(snap.tokens)
        for name in set(token_add) | set(token_del):
            postings = dict(snap.tokens.get(name, {}))
            dels = token_del.get(name, {})
            adds = token_add.get(name, {})
            for token in set(adds) | set(dels):
                old_posting = postings.get(token, _Posting((), {}))
                removals = dels.get(token)
                additions = adds.get(token, {})
                positions = {
                    i: p for i, p in old_posting.positions.items()
                    if not (removals and i in removals)
                }
                positions.update(additions)
                ids = _merge_sorted(old_posting.ids, sorted(additions), removals)
                if ids:
                    postings[token] = _Posting(ids, positions)
                else:
                    postings.pop(token, None)
            new_tokens[name] = postings

        return _Snapshot(
            generation=snap.generation + 1,
            docs=new_docs,
            ids_sorted=_merge_sorted(snap.ids_sorted, sorted(added_ids)),
            exact=new_exact,
            tokens=new_tokens,
            field_types=new_types,
        )

    # ------------------------------------------------------------------
    # reads

    def get_doc(self, index: str, doc_id: str) -> Document | None:
        return self._index(index).snapshot.docs.get(doc_id)

    def generation(self, index: str) -> int:
        return self._index(index).snapshot.generation

    @staticmethod
    def _eval(snap: _Snapshot, query: Query) -> tuple[str, ...]:
        """Matching ids in ascending order."""
        if isinstance(query, MatchAll):
            return snap.ids_sorted
        if isinstance(query, Term):
            family = snap.field_types.get(query.field)
            if family is None or family != _family(query.value):
                return ()
            return snap.exact.get(query.field, {}).get(query.value, ())
        if isinstance(query, Phrase):
            postings = snap.tokens.get(query.field, {})
            entries = [postings.get(token) for token in query.tokens]
            if not entries or any(e is None for e in entries):
                return ()
            # anchor on the rarest token; probe the others' position dicts
            # instead of materializing candidate sets per document
            base = min(range(len(entries)), key=lambda k: len(entries[k].ids))
            base_entry = entries[base]
            others = [(k - base, entries[k]) for k in range(len(entries)) if k != base]
            hits = []
            for doc_id in base_entry.ids:
                plists = []
                for delta, entry in others:
                    positions = entry.positions.get(doc_id)
                    if positions is None:
                        break
                    plists.append((delta, positions))
                else:
                    for anchor in base_entry.positions[doc_id]:
                        if all(anchor + delta in positions for delta, positions in plists):
                            hits.append(doc_id)
                            break
            return tuple(hits)  # ids of any posting are already ascending
        if isinstance(query, And):
            if not query.children:
                return snap.ids_sorted
            results = [MiniStore._eval(snap, child) for child in query.children]
            results.sort(key=len)
            common = set(results[0])
            for other in results[1:]:
                common &= set(other)
                if not common:
                    return ()
            return tuple(sorted(common))
        raise MalformedQuery(f"unsupported query node {query!r}")

    def search(self, index: str, query: Query, limit: int | None = DEFAULT_SEARCH_LIMIT) -> SearchResult:
        snap = self._index(index).snapshot
        ids = self._eval(snap, query)
        selected = ids if limit is None else ids[:limit]
        return SearchResult(total=len(ids), docs=tuple(snap.docs[i] for i in selected))

    # ------------------------------------------------------------------
    # aggregation

    def _agg_view(self, idx: _Index, group_field: str, sum_field: str):
        """Group codes + sum column from one consistent snapshot."""
        with idx.columns_lock:
            snap, cache = self._columns_cache(idx)
            # build both pieces against this snapshot while holding the lock
            if group_field not in cache["groups"]:
                docs = snap.docs
                n = len(snap.ids_sorted)
                codes = np.empty(n, dtype=np.intp)
                code_of: dict = {}
                uniques: list = []
                for row, doc_id in enumerate(snap.ids_sorted):
                    value = docs[doc_id].fields.get(group_field)
                    if value is None:
                        codes[row] = -1
                        continue
                    code = code_of.get(value)
                    if code is None:
                        code = len(uniques)
                        code_of[value] = code
                        uniques.append(value)
                    codes[row] = code
                cache["groups"][group_field] = (codes, tuple(uniques))
            if sum_field not in cache["cols"]:
                docs = snap.docs
                n = len(snap.ids_sorted)
                col = np.empty(n, dtype=np.float64)
                present = np.empty(n, dtype=np.bool_)
                for row, doc_id in enumerate(snap.ids_sorted):
                    value = docs[doc_id].fields.get(sum_field)
                    col[row] = _as_number(value)
                    present[row] = isinstance(value, (int, float)) and not isinstance(value, bool)
                cache["cols"][sum_field] = col
                cache["present"][sum_field] = present
            codes, uniques = cache["groups"][group_field]
            return snap, codes, uniques, cache["cols"][sum_field], cache["present"][sum_field]

    def aggregate(self, index: str, group_field: str, sum_field: str,
                  use_cache: bool = False, query: Query | None = None) -> tuple[dict, bool]:
        """Sum *sum_field* grouped by *group_field*; returns (groups, cached).

        With use_cache, a repeat call at an unchanged generation returns
        the memoized result; correctness never depends on the cache
        because stale generations are never served. Unfiltered
        aggregations run over cached per-generation group-code and value
        columns (sums accumulate in float64, exact for integer fields up
        to 2**53); filtered aggregations scan the matching documents and
        keep native int/float arithmetic.
        """
        idx = self._index(index)
        snap = idx.snapshot
        if group_field not in snap.field_types:
            raise FieldMissing(f"no field {group_field!r} in index {index!r}")
        if sum_field not in snap.field_types:
            raise FieldMissing(f"no field {sum_field!r} in index {index!r}")
        if snap.field_types[sum_field] != "numeric":
            raise NonNumericField(f"field {sum_field!r} is not numeric")

        key = json.dumps([group_field, sum_field, canonical_query_key(query)])
        if use_cache:
            with idx.agg_cache_lock:
                hit = idx.agg_cache.get(key)
                if hit is not None and hit[0] == snap.generation:
                    idx.agg_cache.move_to_end(key)
                    return hit[1], True

        sums: dict[Scalar, Scalar]
        if query is None or isinstance(query, MatchAll):
            snap, codes, uniques, values, present = self._agg_view(idx, group_field, sum_field)
            valid = (codes >= 0) & present
            vcodes = codes[valid]
            totals = np.bincount(vcodes, weights=values[valid], minlength=len(uniques))
            counts = np.bincount(vcodes, minlength=len(uniques))
            sums = {uniques[i]: float(totals[i]) for i in np.flatnonzero(counts)}
        else:
            sums = {}
            for doc_id in self._eval(snap, query):
                fields = snap.docs[doc_id].fields
                group = fields.get(group_field)
                value = fields.get(sum_field)
                if group is None or value is None:
                    continue
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    continue
                sums[group] = sums.get(group, 0) + value

        if use_cache:
            with idx.agg_cache_lock:
                idx.agg_cache[key] = (snap.generation, sums)
                while len(idx.agg_cache) > 64:
                    idx.agg_cache.popitem(last=False)
        return sums, False

    # ------------------------------------------------------------------
    # scroll

    def scroll_open(self, index: str, query: Query, page_size: int) -> str:
        """Materialize the result set at the current generation; returns a cursor id."""
        if page_size < 1:
            raise MalformedQuery("page_size must be >= 1")
        snap = self._index(index).snapshot
        ids = self._eval(snap, query)
        cursor_id = secrets.token_hex(16)
        cursor = _Cursor(
            index=index,
            docs=snap.docs,
            ids=ids,
            page_size=page_size,
            pos=0,
            expires_at=self._clock() + self.scroll_ttl_secs,
        )
        with self._cursor_lock:
            self._reap_cursors()
            self._cursors[cursor_id] = cursor
        return cursor_id

    def scroll_next(self, cursor_id: str) -> tuple[Document, ...] | Exhausted:
        """Next page (possibly shorter at the tail), or EXHAUSTED when drained."""
        now = self._clock()
        with self._cursor_lock:
            cursor = self._cursors.get(cursor_id)
            if cursor is None:
                raise CursorUnknown(f"no such cursor {cursor_id!r}")
            if cursor.expires_at <= now:
                del self._cursors[cursor_id]
                raise CursorExpired(f"cursor {cursor_id!r} expired")
            if cursor.pos >= len(cursor.ids):
                del self._cursors[cursor_id]
                return EXHAUSTED
            page_ids = cursor.ids[cursor.pos:cursor.pos + cursor.page_size]
            cursor.pos += len(page_ids)
            cursor.expires_at = now + self.scroll_ttl_secs
        return tuple(cursor.docs[i] for i in page_ids)

    def _reap_cursors(self) -> None:
        # caller holds _cursor_lock
        now = self._clock()
        dead = [cid for cid, c in self._cursors.items() if c.expires_at <= now]
        for cid in dead:
            del self._cursors[cid]

    # ------------------------------------------------------------------
    # expression ranking

    def _columns_cache(self, idx: _Index) -> tuple[_Snapshot, dict]:
        # caller must already hold columns_lock or tolerate rebuild races;
        # see _column_view/_group_view
        snap = idx.snapshot
        cache = idx.columns
        if cache is None or cache["generation"] != snap.generation:
            cache = {"generation": snap.generation, "row_of": None,
                     "cols": {}, "present": {}, "groups": {}}
            idx.columns = cache
        return snap, cache

    def _column_view(self, idx: _Index, fields: frozenset[str]):
        """Numeric column arrays aligned to ids_sorted, cached per generation.

        Returns (snapshot, columns-for-requested-fields, row_of map); the
        returned dict is a private copy so later cache growth by other
        threads cannot disturb the caller.
        """
        with idx.columns_lock:
            snap, cache = self._columns_cache(idx)
            docs = snap.docs
            n = len(snap.ids_sorted)
            for name in fields:
                if name not in cache["cols"]:
                    col = np.empty(n, dtype=np.float64)
                    present = np.empty(n, dtype=np.bool_)
                    for row, doc_id in enumerate(snap.ids_sorted):
                        value = docs[doc_id].fields.get(name)
                        col[row] = _as_number(value)
                        present[row] = isinstance(value, (int, float)) and not isinstance(value, bool)
                    cache["cols"][name] = col
                    cache["present"][name] = present
            if cache["row_of"] is None:
                cache["row_of"] = {doc_id: row for row, doc_id in enumerate(snap.ids_sorted)}
            return snap, {f: cache["cols"][f] for f in fields}, cache["row_of"]


    def expression_search(self, index: str, expr: Expr | str,
                          limit: int | None = DEFAULT_SEARCH_LIMIT,
                          query: Query | None = None) -> ExpressionResult:
        """Rank documents by the expression value, descending, ties by id."""
        if isinstance(expr, str):
            expr = parse_expr(expr)
        idx = self._index(index)
        fields = expr_fields(expr)
        snap, cols, row_of = self._column_view(idx, fields)
        warnings: dict[str, int] = {}

        if query is None or isinstance(query, MatchAll):
            ids = snap.ids_sorted
            n = len(ids)
        else:
            ids = self._eval(snap, query)
            n = len(ids)
            rows = np.fromiter((row_of[i] for i in ids), dtype=np.intp, count=n)
            cols = {name: col[rows] for name, col in cols.items()}

        values = evaluate_columns(expr, cols, n, warnings)
        order = _top_rows_desc(values, limit)
        docs = tuple(snap.docs[ids[int(row)]] for row in order)
        picked = tuple(float(values[int(row)]) for row in order)
        return ExpressionResult(total=n, docs=docs, values=picked, warnings=warnings)

    # ------------------------------------------------------------------
    # oplog

    def _log(self, record: dict) -> None:
        if self._oplog_file is None:
            return
        with self._oplog_lock:
            self._oplog_file.write(json.dumps(record, separators=(",", ":")) + "\n")
            self._oplog_file.flush()

    def _replay_oplog(self) -> None:
        if not self._oplog_path.exists():
            return
        count = 0
        with open(self._oplog_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                op = record["op"]
                if op == "create_index":
                    self.create_index(record["index"])
                elif op == "delete_index":
                    self.delete_index(record["index"])
                elif op == "bulk":
                    self.bulk_index(record["index"],
                                    [(d, f) for d, f in record["docs"]])
                count += 1
        logger.info("replayed %d oplog records from %s", count, self._oplog_path)

    def close(self) -> None:
        if self._oplog_file is not None:
            self._oplog_file.close()
            self._oplog_file = None
