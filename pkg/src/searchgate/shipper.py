"""Bulk ingestion client: line-delimited records in, gateway bulk calls out.

Reads one JSON document per line from a file or stdin, batches them, and
pushes each batch through the gateway's bulk endpoint with basic
credentials. Transport security mirrors the gateway's boundary rule: a
plaintext target is refused outright unless it is loopback, before
anything is sent. Delivery is at-least-once: failed batches retry whole
with exponential backoff, and ids are fixed before the first attempt so a
retried batch replays idempotently.
"""

from __future__ import annotations

import base64
import http.client
import json
import logging
import secrets
import ssl
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterator
from urllib.parse import urlsplit

from .server import is_loopback_host

logger = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 500
DEFAULT_PARALLEL_SENDERS = 2
DEFAULT_MAX_ATTEMPTS = 3


class ShipError(Exception):
    pass


class TlsRequired(ShipError):
    """Plaintext to a non-loopback target; refused before any send."""


class ShipAuthFailed(ShipError):
    pass


class TargetUnreachable(ShipError):
    pass


@dataclass(frozen=True)
class ShipConfig:
    source: str  # file path or "-" for stdin
    target_url: str
    index: str
    batch_size: int = DEFAULT_BATCH_SIZE
    tls_ca: str | None = None
    verify_hostname: bool = True
    username: str | None = None
    password: str | None = None
    parallel_senders: int = DEFAULT_PARALLEL_SENDERS
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    backoff_base_secs: float = 0.2


@dataclass
class ShipStats:
    sent: int = 0
    failed: int = 0
    batches: int = 0
    retries: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, *, sent: int = 0, failed: int = 0, batches: int = 0, retries: int = 0):
        with self._lock:
            self.sent += sent
            self.failed += failed
            self.batches += batches
            self.retries += retries


def _check_transport(config: ShipConfig) -> None:
    parts = urlsplit(config.target_url)
    if parts.scheme == "https":
        return
    if parts.scheme == "http" and is_loopback_host(parts.hostname or ""):
        return
    raise TlsRequired(
        f"refusing plaintext to non-loopback target {config.target_url!r}; use https"
    )


def _parse_lines(lines: Iterator[str], stats: ShipStats) -> Iterator[tuple[str, dict]]:
    """(doc_id, fields) per good line; malformed lines count as failed."""
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
            if not isinstance(record, dict):
                raise ValueError("record must be a JSON object")
        except (json.JSONDecodeError, ValueError) as exc:
            logger.warning("skipping line %d: %s", lineno, exc)
            stats.add(failed=1)
            continue
        doc_id = record.pop("_id", None)
        if doc_id is None:
            # fix the id now so retried batches replay idempotently
            doc_id = secrets.token_hex(12)
        yield str(doc_id), record


class _Sender:
    def __init__(self, config: ShipConfig):
        self.config = config
        parts = urlsplit(config.target_url)
        self.host = parts.hostname or ""
        self.tls = parts.scheme == "https"
        self.port = parts.port or (443 if self.tls else 80)
        self.path = f"/{config.index}/_bulk"
        self.headers = {"Content-Type": "application/x-ndjson"}
        if config.username is not None:
            token = base64.b64encode(
                f"{config.username}:{config.password or ''}".encode()
            ).decode()
            self.headers["Authorization"] = f"Basic {token}"
        self._context = None
        if self.tls:
            self._context = ssl.create_default_context(cafile=config.tls_ca)
            self._context.check_hostname = config.verify_hostname
        self._local = threading.local()

    def _connection(self):
        conn = getattr(self._local, "conn", None)
        if conn is None:
            if self.tls:
                conn = http.client.HTTPSConnection(
                    self.host, self.port, timeout=30, context=self._context
                )
            else:
                conn = http.client.HTTPConnection(self.host, self.port, timeout=30)
            self._local.conn = conn
        return conn

    def _drop(self) -> None:
        conn = getattr(self._local, "conn", None)
        if conn is not None:
            try:
                conn.close()
            finally:
                self._local.conn = None

    def send_batch(self, batch: list[tuple[str, dict]], stats: ShipStats) -> None:
        """One whole batch: acknowledged fully or retried/failed whole."""
        lines = []
        for doc_id, fields in batch:
            lines.append(json.dumps({"index": {"_id": doc_id}}, separators=(",", ":")))
            lines.append(json.dumps(fields, separators=(",", ":")))
        body = ("\n".join(lines) + "\n").encode("utf-8")

        last_error: Exception | None = None
        for attempt in range(1, self.config.max_attempts + 1):
            if attempt > 1:
                stats.add(retries=1)
                time.sleep(self.config.backoff_base_secs * 2 ** (attempt - 2))
            try:
                conn = self._connection()
                conn.request("POST", self.path, body=body, headers=self.headers)
                response = conn.getresponse()
                payload = response.read()
            except (OSError, http.client.HTTPException) as exc:
                self._drop()
                last_error = TargetUnreachable(str(exc))
                continue
            if response.status in (401, 403):
                raise ShipAuthFailed(f"{response.status}: {payload[:200]!r}")
            if response.status >= 500:
                last_error = TargetUnreachable(f"status {response.status}")
                continue
            if response.status != 200:
                raise ShipError(f"bulk rejected: {response.status} {payload[:200]!r}")
            stats.add(sent=len(batch), batches=1)
            return
        stats.add(failed=len(batch))
        logger.error("batch of %d failed after %d attempts: %s",
                     len(batch), self.config.max_attempts, last_error)


def _open_source(config: ShipConfig) -> IO[str]:
    if config.source == "-":
        return sys.stdin
    return open(Path(config.source), encoding="utf-8")


def ship(config: ShipConfig) -> ShipStats:
    """Run one shipment; returns accurate counters.

    Raises TlsRequired before any connection attempt when the transport
    rule is violated, and ShipAuthFailed as soon as the gateway rejects
    the credentials.
    """
    _check_transport(config)
    stats = ShipStats()
    sender = _Sender(config)
    source = _open_source(config)
    try:
        with ThreadPoolExecutor(max_workers=max(1, config.parallel_senders)) as pool:
            futures = []
            batch: list[tuple[str, dict]] = []
            for doc in _parse_lines(iter(source), stats):
                batch.append(doc)
                if len(batch) >= config.batch_size:
                    futures.append(pool.submit(sender.send_batch, batch, stats))
                    batch = []
            if batch:
                futures.append(pool.submit(sender.send_batch, batch, stats))
            for future in futures:
                future.result()  # surface ShipAuthFailed and friends
    finally:
        if source is not sys.stdin:
            source.close()
    return stats
