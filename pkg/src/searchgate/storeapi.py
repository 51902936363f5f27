"""REST adapter for the embedded store.

One routing function maps the search API onto store calls; the gateway
uses it in-process as the embedded backend and the standalone backend
server wraps it behind a listener. Error classes carry their HTTP status.

Routes: PUT/DELETE /{index}, PUT/GET /{index}/_doc/{id},
POST /{index}/_bulk (NDJSON action/source pairs), POST /{index}/_search,
POST /{index}/_aggregate, POST /{index}/_search/scroll,
GET /_cluster/health.
"""

from __future__ import annotations

import json
import logging

from .expr import ExprParseError
from .httpbase import HttpRequest, HttpResponse, error_response, json_response
from .query import MalformedQuery, parse_query_json
from .store import EXHAUSTED, Document, MiniStore, StoreError

logger = logging.getLogger(__name__)


def _doc_payload(doc: Document) -> dict:
    return {"_id": doc.id, "fields": dict(doc.fields)}


def _hits_body(docs, total: int, extra: str = "") -> bytes:
    # splice the cached per-document fragments; scroll pages and large hit
    # lists dominate the read path, re-serializing them per request is the
    # single most expensive thing this adapter can do
    joined = ",".join(d.payload_json for d in docs)
    return f'{{"hits":{{"total":{total},"hits":[{joined}]}}{extra}}}'.encode("utf-8")


_JSON_HEADERS = (("Content-Type", "application/json"),)


def _parse_json_body(request: HttpRequest):
    try:
        return request.json()
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedQuery(f"body is not valid JSON: {exc}") from exc


def parse_bulk_ndjson(body: bytes) -> list[tuple[str | None, dict, str | None]]:
    """Parse NDJSON action/source pairs into (doc_id, fields, index_override).

    Action line: ``{"index": {"_index": optional, "_id": optional}}``
    followed by one source line with the document fields.
    """
    docs: list[tuple[str | None, dict, str | None]] = []
    lines = [ln for ln in body.decode("utf-8").split("\n") if ln.strip()]
    if len(lines) % 2 != 0:
        raise MalformedQuery("bulk body must be action/source line pairs")
    for i in range(0, len(lines), 2):
        try:
            action = json.loads(lines[i])
            source = json.loads(lines[i + 1])
        except json.JSONDecodeError as exc:
            raise MalformedQuery(f"bulk line {i + exc.lineno}: {exc.msg}") from exc
        if not isinstance(action, dict) or set(action) != {"index"} or not isinstance(action["index"], dict):
            raise MalformedQuery(f"bulk line {i + 1}: action must be {{\"index\": {{...}}}}")
        if not isinstance(source, dict):
            raise MalformedQuery(f"bulk line {i + 2}: source must be an object")
        meta = action["index"]
        docs.append((meta.get("_id"), source, meta.get("_index")))
    return docs


def _handle_search(store: MiniStore, index: str, body) -> HttpResponse:
    body = body or {}
    if not isinstance(body, dict):
        raise MalformedQuery("search body must be an object")
    limit = body.get("limit", 10)
    if not isinstance(limit, int) or limit < 0:
        raise MalformedQuery("limit must be a non-negative integer")
    query = parse_query_json(body.get("query"))
    expression = body.get("expression")
    if expression is not None:
        if not isinstance(expression, str):
            raise MalformedQuery("expression must be a string")
        result = store.expression_search(index, expression, limit=limit, query=query)
        hits = [dict(_doc_payload(d), _score=v) for d, v in zip(result.docs, result.values)]
        payload = {"hits": {"total": result.total, "hits": hits}}
        if result.warnings:
            payload["warnings"] = dict(result.warnings)
        return json_response(200, payload)
    result = store.search(index, query, limit=limit)
    return HttpResponse(200, _JSON_HEADERS, _hits_body(result.docs, result.total))


def _handle_aggregate(store: MiniStore, index: str, body) -> HttpResponse:
    if not isinstance(body, dict):
        raise MalformedQuery("aggregate body must be an object")
    group_by = body.get("group_by")
    sum_field = body.get("sum")
    if not isinstance(group_by, str) or not isinstance(sum_field, str):
        raise MalformedQuery("aggregate needs string 'group_by' and 'sum' fields")
    use_cache = bool(body.get("use_cache", False))
    query = parse_query_json(body.get("query")) if body.get("query") is not None else None
    groups, cached = store.aggregate(index, group_by, sum_field, use_cache=use_cache, query=query)
    # group keys may be non-strings; JSON object keys must be strings
    return json_response(200, {"groups": {str(k): v for k, v in sorted(groups.items(), key=lambda kv: str(kv[0]))},
                               "cached": cached})


def _scroll_page_response(cursor_id: str, page) -> HttpResponse:
    if page is EXHAUSTED:
        return json_response(200, {"cursor": cursor_id, "hits": [], "exhausted": True})
    joined = ",".join(d.payload_json for d in page)
    body = f'{{"cursor":"{cursor_id}","hits":[{joined}],"exhausted":false}}'
    return HttpResponse(200, _JSON_HEADERS, body.encode("utf-8"))


def _handle_scroll(store: MiniStore, index: str, body) -> HttpResponse:
    if not isinstance(body, dict):
        raise MalformedQuery("scroll body must be an object")
    if "cursor" in body:
        cursor_id = body["cursor"]
        if not isinstance(cursor_id, str):
            raise MalformedQuery("cursor must be a string")
        return _scroll_page_response(cursor_id, store.scroll_next(cursor_id))
    page_size = body.get("page_size", 1000)
    if not isinstance(page_size, int) or page_size < 1:
        raise MalformedQuery("page_size must be a positive integer")
    query = parse_query_json(body.get("query"))
    cursor_id = store.scroll_open(index, query, page_size)
    return _scroll_page_response(cursor_id, store.scroll_next(cursor_id))


def route(store: MiniStore, request: HttpRequest) -> HttpResponse:
    """Dispatch one request against the store; errors map to JSON responses."""
    try:
        return _route(store, request)
    except (StoreError,) as exc:
        return error_response(exc.status, type(exc).__name__, str(exc))
    except MalformedQuery as exc:
        return error_response(400, "MalformedQuery", str(exc))
    except ExprParseError as exc:
        return error_response(400, "ExprParseError", str(exc))


def _route(store: MiniStore, request: HttpRequest) -> HttpResponse:
    method = request.method.upper()
    path = request.path_only()
    segments = [s for s in path.split("/") if s]

    if method == "GET" and segments == ["_cluster", "health"]:
        return json_response(200, store.stats())

    if len(segments) == 1:
        index = segments[0]
        if method == "PUT":
            created = store.create_index(index)
            return json_response(200, {"acknowledged": True, "index": index, "created": created})
        if method == "DELETE":
            store.delete_index(index)
            return json_response(200, {"acknowledged": True, "index": index})

    if len(segments) == 2:
        index, op = segments
        if method == "POST" and op == "_bulk":
            docs = parse_bulk_ndjson(request.body)
            # action lines may override the target index; atomicity holds
            # per (index, sub-batch)
            by_index: dict[str, list] = {}
            for doc_id, fields, override in docs:
                by_index.setdefault(override or index, []).append((doc_id, fields))
            count = 0
            for target, batch in by_index.items():
                count += store.bulk_index(target, batch)
            return json_response(200, {"items": count, "errors": []})
        if method == "POST" and op == "_search":
            return _handle_search(store, index, _parse_json_body(request))
        if method == "POST" and op == "_aggregate":
            return _handle_aggregate(store, index, _parse_json_body(request))

    if len(segments) == 3:
        index, op, arg = segments
        if op == "_search" and arg == "scroll" and method == "POST":
            return _handle_scroll(store, index, _parse_json_body(request))
        if op == "_doc":
            if method == "PUT":
                body = _parse_json_body(request)
                if not isinstance(body, dict):
                    raise MalformedQuery("document body must be an object")
                result = store.put_doc(index, arg, body)
                return json_response(200, {"_id": arg, "result": result})
            if method == "GET":
                doc = store.get_doc(index, arg)
                if doc is None:
                    return error_response(404, "DocMissing", f"no document {arg!r} in {index!r}")
                return json_response(200, dict(_doc_payload(doc), found=True))

    return error_response(404, "UnknownRoute", f"no route for {method} {path}")
