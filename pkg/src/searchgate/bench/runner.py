"""Load driver: indexes the dataset and runs the seven query scenarios.

One scenario is two phases. Phase one bulk-indexes the generated corpus in
fixed-size batches across the worker pool, timing each batch from send to
acknowledgment (the store commits synchronously, so that round trip is the
make-searchable latency) and recording per-batch throughput. Phase two
runs each query type for the configured count, recording wall-clock
latencies on a monotonic clock and a canonical digest of every response so
correctness can be compared across runs and thread counts.

The same seed always produces the same documents and the same query
arguments regardless of thread count; only the timings differ. A failed
request aborts the run: partial sample sets are never returned.
"""

from __future__ import annotations

import base64
import hashlib
import http.client
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable
from urllib.parse import urlsplit

from .dataset import generate_dataset
from .report import QUERY_TYPES, BenchError, SampleSet

logger = logging.getLogger(__name__)

EXPRESSION_FORMULA = "log(population + 1) + elevation / 1000 - latitude / 100"

DEFAULT_DOC_COUNT = 100_000
DEFAULT_BULK_SIZE = 5000
DEFAULT_QUERY_COUNT = 1000
DEFAULT_CLIENT_THREADS = 8
WARMUP_FRACTION = 0.1


class TargetUnreachable(BenchError):
    pass


class BenchAuthFailed(BenchError):
    pass


@dataclass(frozen=True)
class Scenario:
    doc_count: int = DEFAULT_DOC_COUNT
    bulk_size: int = DEFAULT_BULK_SIZE
    query_count: int = DEFAULT_QUERY_COUNT
    client_threads: int = DEFAULT_CLIENT_THREADS
    seed: int = 42
    target: str = "direct"  # direct | gateway
    index: str = "geonames"
    scroll_page_size: int = 1000
    scroll_pages: int = 25
    search_limit: int = 10
    expression: str = EXPRESSION_FORMULA

    def __post_init__(self):
        for name in ("doc_count", "bulk_size", "query_count", "client_threads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return {
            "doc_count": self.doc_count,
            "bulk_size": self.bulk_size,
            "query_count": self.query_count,
            "client_threads": self.client_threads,
            "seed": self.seed,
            "target": self.target,
            "index": self.index,
            "scroll_page_size": self.scroll_page_size,
            "scroll_pages": self.scroll_pages,
            "search_limit": self.search_limit,
            "expression": self.expression,
        }


class TargetClient:
    """Thread-safe HTTP client with one persistent connection per thread."""

    def __init__(self, base_url: str, username: str | None = None,
                 password: str | None = None, timeout_secs: float = 60.0):
        parts = urlsplit(base_url)
        if parts.scheme != "http":
            raise BenchError(f"bench targets speak plain http, got {base_url!r}")
        self.host = parts.hostname or "127.0.0.1"
        self.port = parts.port or 80
        self.timeout_secs = timeout_secs
        self.headers = {"Content-Type": "application/json"}
        if username is not None:
            token = base64.b64encode(f"{username}:{password or ''}".encode()).decode()
            self.headers["Authorization"] = f"Basic {token}"
        self._local = threading.local()

    def _connection(self) -> http.client.HTTPConnection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = http.client.HTTPConnection(self.host, self.port,
                                              timeout=self.timeout_secs)
            self._local.conn = conn
        return conn

    def _drop(self) -> None:
        conn = getattr(self._local, "conn", None)
        if conn is not None:
            try:
                conn.close()
            finally:
                self._local.conn = None

    def request(self, method: str, path: str, body: bytes = b"") -> tuple[int, bytes]:
        for attempt in (1, 2):  # one retry for a dropped keep-alive connection
            conn = self._connection()
            try:
                conn.request(method, path, body=body, headers=self.headers)
                response = conn.getresponse()
                return response.status, response.read()
            except (OSError, http.client.HTTPException) as exc:
                self._drop()
                if attempt == 2:
                    raise TargetUnreachable(f"{method} {path}: {exc}") from exc
        raise AssertionError("unreachable")

    def request_json(self, method: str, path: str, payload=None) -> tuple[int, object]:
        body = json.dumps(payload, separators=(",", ":")).encode() if payload is not None else b""
        status, raw = self.request(method, path, body)
        try:
            return status, json.loads(raw) if raw else None
        except json.JSONDecodeError as exc:
            raise BenchError(f"non-JSON response from {path}: {raw[:200]!r}") from exc


def _expect(status: int, payload, what: str) -> None:
    if status in (401, 403):
        raise BenchAuthFailed(f"{what}: {status} {payload}")
    if status != 200:
        raise BenchError(f"{what}: unexpected status {status}: {payload}")


def _canonical_digest(parts: Iterable[str]) -> str:
    digest = hashlib.sha256()
    for part in parts:
        digest.update(part.encode("utf-8"))
        digest.update(b"\x1e")
    return digest.hexdigest()


def _build_batches(scenario: Scenario) -> list[tuple[bytes, int]]:
    """Pre-serialized NDJSON bulk bodies with their document counts."""
    batches: list[tuple[bytes, int]] = []
    lines: list[str] = []
    count = 0
    for record in generate_dataset(scenario.doc_count, scenario.seed):
        fields = dict(record)
        doc_id = fields.pop("_id")
        lines.append(json.dumps({"index": {"_id": doc_id}}, separators=(",", ":")))
        lines.append(json.dumps(fields, separators=(",", ":")))
        count += 1
        if count == scenario.bulk_size:
            batches.append((("\n".join(lines) + "\n").encode(), count))
            lines, count = [], 0
    if lines:
        batches.append((("\n".join(lines) + "\n").encode(), count))
    return batches


def _search_body(scenario: Scenario, qtype: str) -> dict | None:
    if qtype == "default":
        return {"limit": scenario.search_limit}
    if qtype == "term":
        return {"query": {"term": {"field": "country_code", "value": "AT"}},
                "limit": scenario.search_limit}
    if qtype == "phrase":
        return {"query": {"phrase": {"field": "name", "text": "Sankt Georgen"}},
                "limit": scenario.search_limit}
    if qtype == "expression":
        return {"expression": scenario.expression, "limit": scenario.search_limit}
    return None


def _hits_summary(payload: dict) -> str:
    hits = payload.get("hits", {})
    return json.dumps(hits, sort_keys=True, separators=(",", ":"))


def _run_one_query(client: TargetClient, scenario: Scenario, qtype: str) -> tuple[float, str]:
    """Execute one query of *qtype*; returns (latency ms, canonical digest)."""
    index = scenario.index
    if qtype in ("default", "term", "phrase", "expression"):
        body = json.dumps(_search_body(scenario, qtype), separators=(",", ":")).encode()
        t0 = time.perf_counter()
        status, raw = client.request("POST", f"/{index}/_search", body)
        elapsed = (time.perf_counter() - t0) * 1000.0
        payload = json.loads(raw)
        _expect(status, payload, qtype)
        return elapsed, _canonical_digest([_hits_summary(payload)])

    if qtype in ("agg_uncached", "agg_cached"):
        body = json.dumps({"group_by": "country_code", "sum": "population",
                           "use_cache": qtype == "agg_cached"},
                          separators=(",", ":")).encode()
        t0 = time.perf_counter()
        status, raw = client.request("POST", f"/{index}/_aggregate", body)
        elapsed = (time.perf_counter() - t0) * 1000.0
        payload = json.loads(raw)
        _expect(status, payload, qtype)
        canon = json.dumps(payload.get("groups", {}), sort_keys=True, separators=(",", ":"))
        return elapsed, _canonical_digest([canon])

    if qtype == "scroll":
        open_body = json.dumps({"query": {"match_all": {}},
                                "page_size": scenario.scroll_page_size},
                               separators=(",", ":")).encode()
        pages: list[str] = []
        t0 = time.perf_counter()
        status, raw = client.request("POST", f"/{index}/_search/scroll", open_body)
        payload = json.loads(raw)
        _expect(status, payload, "scroll open")
        pages.append(json.dumps([h["_id"] for h in payload["hits"]],
                                separators=(",", ":")))
        fetched = 1
        while fetched < scenario.scroll_pages and not payload["exhausted"]:
            next_body = json.dumps({"cursor": payload["cursor"]},
                                   separators=(",", ":")).encode()
            status, raw = client.request("POST", f"/{index}/_search/scroll", next_body)
            payload = json.loads(raw)
            _expect(status, payload, "scroll next")
            pages.append(json.dumps([h["_id"] for h in payload["hits"]],
                                    separators=(",", ":")))
            fetched += 1
        elapsed = (time.perf_counter() - t0) * 1000.0
        return elapsed, _canonical_digest(pages)

    raise BenchError(f"unknown query type {qtype!r}")


def run_scenario(scenario: Scenario, client: TargetClient) -> SampleSet:
    """Both phases against an already-reachable target; see module docstring."""
    index = scenario.index
    status, payload = client.request_json("GET", "/_cluster/health")
    _expect(status, payload, "health probe")

    # start from an empty index (destructive on the target index by design)
    status, _ = client.request("DELETE", f"/{index}")
    if status not in (200, 404):
        raise BenchError(f"could not clear index {index}: {status}")
    status, payload = client.request_json("PUT", f"/{index}")
    _expect(status, payload, f"create index {index}")

    samples = SampleSet(scenario=scenario.to_dict())

    # ---- phase 1: indexing -------------------------------------------------
    batches = _build_batches(scenario)
    throughput: list[float | None] = [None] * len(batches)
    latency: list[float | None] = [None] * len(batches)

    def index_batch(i: int) -> None:
        body, size = batches[i]
        t0 = time.perf_counter()
        status, raw = client.request("POST", f"/{index}/_bulk", body)
        elapsed = time.perf_counter() - t0
        payload = json.loads(raw)
        _expect(status, payload, f"bulk batch {i}")
        if payload.get("items") != size:
            raise BenchError(f"batch {i}: acknowledged {payload.get('items')} of {size}")
        latency[i] = elapsed * 1000.0
        throughput[i] = size / elapsed if elapsed > 0 else float("inf")

    with ThreadPoolExecutor(max_workers=scenario.client_threads) as pool:
        list(pool.map(index_batch, range(len(batches))))
    samples.make_searchable_ms = [float(x) for x in latency]
    samples.indexing_throughput_dps = [float(x) for x in throughput]
    samples.warmup["indexing"] = 0

    # ---- phase 2: queries --------------------------------------------------
    for qtype in QUERY_TYPES:
        count = scenario.query_count
        latencies: list[float | None] = [None] * count
        digests: list[str | None] = [None] * count

        def run_query(i: int, qtype=qtype, latencies=latencies, digests=digests) -> None:
            elapsed, digest = _run_one_query(client, scenario, qtype)
            latencies[i] = elapsed
            digests[i] = digest

        with ThreadPoolExecutor(max_workers=scenario.client_threads) as pool:
            list(pool.map(run_query, range(count)))

        unique = set(digests)
        if len(unique) != 1:
            raise BenchError(f"{qtype}: non-deterministic result sets ({len(unique)} variants)")
        samples.query_latency_ms[qtype] = [float(x) for x in latencies]
        samples.warmup[qtype] = int(count * WARMUP_FRACTION)
        samples.result_digests[qtype] = next(iter(unique))
        logger.info("%s: %d queries done", qtype, count)

    return samples
