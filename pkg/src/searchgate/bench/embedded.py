"""Self-contained bench targets: spawn a backend or a full gateway locally.

The measured server always runs in its own process so client-side load
generation and server-side work do not share an interpreter. ``direct``
spawns the bare backend; ``gateway`` provisions a scratch credential /
directory / ACL stack granting one bench user the run's index, then
spawns the gateway with the embedded backend, the same topology the
overhead comparison needs.
"""

from __future__ import annotations

import contextlib
import json
import secrets
import socket
import subprocess
import sys
import tempfile
import time
from pathlib import Path

from ..auth import write_credentials
from .report import BenchError
from .runner import Scenario, TargetClient

BENCH_USER = "bench"
READY_TIMEOUT_SECS = 15.0


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def _wait_ready(client: TargetClient) -> None:
    deadline = time.monotonic() + READY_TIMEOUT_SECS
    while True:
        try:
            status, _ = client.request_json("GET", "/_cluster/health")
            if status == 200:
                return
        except BenchError:
            pass
        if time.monotonic() > deadline:
            raise BenchError("spawned target did not become ready")
        time.sleep(0.05)


def _spawn(args: list[str]) -> subprocess.Popen:
    return subprocess.Popen(
        [sys.executable, "-m", "searchgate.cli", *args],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )


@contextlib.contextmanager
def embedded_target(scenario: Scenario):
    """Yield a ready TargetClient for the scenario's mode; cleans up after."""
    port = free_port()
    listen = f"127.0.0.1:{port}"
    base_url = f"http://{listen}"

    if scenario.target == "direct":
        proc = _spawn(["store", "--listen", listen])
        client = TargetClient(base_url)
    elif scenario.target == "gateway":
        workdir = Path(tempfile.mkdtemp(prefix="searchgate-bench-"))
        password = secrets.token_hex(12)
        write_credentials(workdir / "credentials", {BENCH_USER: password})
        (workdir / "directory.json").write_text(json.dumps({"groups": {}}))
        (workdir / "acl.json").write_text(json.dumps({
            "roles": [{
                "name": "bench_runner",
                "principals": [BENCH_USER],
                "index_patterns": [f"{scenario.index}*"],
                "actions": ["read", "write", "delete", "manage", "cluster_monitor"],
            }]
        }))
        config = {
            "auth": {"mode": "basic", "credentials_path": str(workdir / "credentials")},
            "directory": {"path": str(workdir / "directory.json")},
            "acl": {"path": str(workdir / "acl.json")},
            "gateway": {"listen": listen, "backend": "embedded"},
        }
        (workdir / "config.json").write_text(json.dumps(config))
        proc = _spawn(["serve", "--config", str(workdir / "config.json")])
        client = TargetClient(base_url, username=BENCH_USER, password=password)
    else:
        raise BenchError(f"unknown target mode {scenario.target!r}")

    try:
        _wait_ready(client)
        yield client
    finally:
        proc.terminate()
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:  # pragma: no cover
            proc.kill()
