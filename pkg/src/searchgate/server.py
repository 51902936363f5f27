"""Threaded HTTP listeners for the gateway and the standalone backend.

One generic adapter turns a ``handle(HttpRequest) -> HttpResponse``
callable into a keep-alive HTTP/1.1 server. TLS termination is a config
option; plaintext listeners are refused off-loopback, mirroring the
secured boundary the gateway is supposed to provide.
"""

from __future__ import annotations

import ipaddress
import logging
import ssl
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable

from .config import ConfigError
from .httpbase import Headers, HttpRequest, HttpResponse
from .storeapi import route as store_route

logger = logging.getLogger(__name__)

Handler = Callable[[HttpRequest], HttpResponse]

_MAX_BODY = 256 * 1024 * 1024


def is_loopback_host(host: str) -> bool:
    if host in ("localhost", ""):
        return True
    try:
        return ipaddress.ip_address(host).is_loopback
    except ValueError:
        return False


def parse_listen(listen: str) -> tuple[str, int]:
    host, _, port = listen.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"listen address must be host:port, got {listen!r}")
    return host, int(port)


def _make_handler_class(handle: Handler, scheme: str):
    class _Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "searchgate"
        # one coalesced segment per response: an unbuffered wfile sends the
        # header block and the body as two small writes, and Nagle plus the
        # peer's delayed ACK then stalls the second one by ~40 ms
        wbufsize = -1
        disable_nagle_algorithm = True

        def _dispatch(self) -> None:
            if self.headers.get("Transfer-Encoding", "").lower() == "chunked":
                self._write(HttpResponse(501, (("Content-Type", "text/plain"),),
                                         b"chunked bodies not supported"))
                return
            length = int(self.headers.get("Content-Length") or 0)
            if length > _MAX_BODY:
                self._write(HttpResponse(413, (), b""))
                return
            body = self.rfile.read(length) if length else b""
            request = HttpRequest(
                method=self.command,
                path=self.path,
                headers=Headers(self.headers.items()),
                body=body,
                client_host=self.client_address[0],
                scheme=scheme,
            )
            try:
                response = handle(request)
            except Exception:
                logger.exception("handler crashed")
                response = HttpResponse(500, (("Content-Type", "text/plain"),),
                                        b"internal error")
            self._write(response)

        def _write(self, response: HttpResponse) -> None:
            try:
                self.send_response(response.status)
                seen_ct = False
                for name, value in response.headers:
                    if name.lower() == "content-length":
                        continue
                    if name.lower() == "content-type":
                        seen_ct = True
                    self.send_header(name, value)
                if not seen_ct and response.body:
                    self.send_header("Content-Type", "application/octet-stream")
                self.send_header("Content-Length", str(len(response.body)))
                self.end_headers()
                if response.body:
                    self.wfile.write(response.body)
            except (BrokenPipeError, ConnectionResetError):  # client went away
                pass

        do_GET = _dispatch
        do_POST = _dispatch
        do_PUT = _dispatch
        do_DELETE = _dispatch
        do_HEAD = _dispatch

        def log_message(self, fmt, *args):  # route through logging, not stderr
            logger.debug("%s %s", self.client_address[0], fmt % args)

    return _Handler


class HttpServer:
    """A started listener; ``close()`` shuts it down and joins the thread."""

    def __init__(self, server: ThreadingHTTPServer, scheme: str):
        self._server = server
        self.scheme = scheme
        self._thread = threading.Thread(target=server.serve_forever, daemon=True)

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def host(self) -> str:
        return self._server.server_address[0]

    @property
    def base_url(self) -> str:
        return f"{self.scheme}://{self.host}:{self.port}"

    def start(self) -> "HttpServer":
        self._thread.start()
        logger.info("listening on %s", self.base_url)
        return self

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self) -> "HttpServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.close()


def make_server(
    handle: Handler,
    listen: str,
    *,
    tls_cert: str | None = None,
    tls_key: str | None = None,
) -> HttpServer:
    """Bind a listener for *handle*; TLS when cert+key are given.

    Plaintext is allowed only on loopback addresses; anything else must
    terminate TLS at this listener.
    """
    host, port = parse_listen(listen)
    tls = bool(tls_cert and tls_key)
    if not tls and not is_loopback_host(host):
        raise ConfigError(
            f"plaintext listener on non-loopback address {host!r}; configure tls_cert/tls_key"
        )
    scheme = "https" if tls else "http"
    handler_class = _make_handler_class(handle, scheme)
    server = ThreadingHTTPServer((host, port), handler_class)
    server.daemon_threads = True
    if tls:
        context = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
        context.load_cert_chain(certfile=tls_cert, keyfile=tls_key)
        server.socket = context.wrap_socket(server.socket, server_side=True)
    return HttpServer(server, scheme)


def make_gateway_server(core, listen: str | None = None) -> HttpServer:
    cfg = core.config.gateway
    return make_server(
        core.handle,
        listen if listen is not None else cfg.listen,
        tls_cert=cfg.tls_cert,
        tls_key=cfg.tls_key,
    )


def make_store_server(store, listen: str) -> HttpServer:
    return make_server(lambda request: store_route(store, request), listen)
