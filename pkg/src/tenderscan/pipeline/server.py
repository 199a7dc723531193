"""Read-only HTTP listing of manifests.

``GET /notices`` returns the most recent manifest, ``GET /notices/<run_id>``
a specific one and ``GET /health`` the text ``ok``.
"""
from __future__ import annotations

import errno
import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Dict, Sequence, Union

from .manifest import Manifest

log = logging.getLogger(__name__)


class PortInUse(OSError):
    pass


class _Handler(BaseHTTPRequestHandler):
    server_version = "tenderscan"
    # filled in per server class
    payloads: Dict[str, bytes] = {}
    latest: bytes = b""

    def _send(self, status: int, body: bytes, ctype: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(body)

    def do_GET(self):
        path = self.path.split("?", 1)[0].rstrip("/") or "/"
        if path == "/health":
            self._send(200, b"ok", "text/plain; charset=utf-8")
        elif path == "/notices":
            self._send(200, self.latest, "application/json")
        elif path.startswith("/notices/") and path[len("/notices/"):] in self.payloads:
            self._send(200, self.payloads[path[len("/notices/"):]], "application/json")
        else:
            self._send(404, b'{"error": "not found"}', "application/json")

    do_HEAD = do_GET

    def _refuse(self):
        self.send_response(405)
        self.send_header("Allow", "GET, HEAD")
        self.send_header("Content-Length", "0")
        self.end_headers()

    do_POST = do_PUT = do_DELETE = do_PATCH = _refuse

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)


def make_server(manifests: Union[Manifest, Sequence[Manifest]], port: int,
                host: str = "127.0.0.1") -> ThreadingHTTPServer:
    """Bind a listing server over immutable snapshots of ``manifests``.

    The last manifest in the sequence is the one served at ``/notices``.
    Port 0 picks a free port (see ``server.server_address``).
    """
    if isinstance(manifests, Manifest):
        manifests = [manifests]
    payloads = {m.run_id: json.dumps(m.to_dict(), ensure_ascii=False).encode("utf-8") for m in manifests}
    latest = payloads[manifests[-1].run_id] if manifests else json.dumps(
        Manifest(run_id="", created_at="").to_dict()).encode("utf-8")
    handler = type("ListingHandler", (_Handler,), {"payloads": payloads, "latest": latest})
    try:
        return ThreadingHTTPServer((host, port), handler)
    except OSError as exc:
        if exc.errno == errno.EADDRINUSE:
            raise PortInUse(f"port {port} is already in use") from exc
        raise


def serve_listing(manifests, port: int, host: str = "127.0.0.1", block: bool = True) -> ThreadingHTTPServer:
    """Serve manifests; with ``block=False`` run in a daemon thread and return the server."""
    server = make_server(manifests, port, host)
    if block:
        try:
            server.serve_forever()
        finally:
            server.server_close()
    else:
        threading.Thread(target=server.serve_forever, daemon=True).start()
    return server
