"""TCP transport: 4-byte big-endian length prefix, then one canonical JSON message."""
from __future__ import annotations

import json
import logging
import socket
import socketserver
import struct
import threading

from .io import canonical_dumps
from .mpc import SolverConfig

log = logging.getLogger(__name__)

HEADER = struct.Struct(">I")
MAX_FRAME = 64 * 1024 * 1024


class TransportError(ConnectionError):
    pass


def send_frame(sock: socket.socket, msg: dict) -> None:
    data = canonical_dumps(msg).encode("utf-8")
    sock.sendall(HEADER.pack(len(data)) + data)


def _recv_exact(sock: socket.socket, size: int) -> bytes:
    buf = bytearray()
    while len(buf) < size:
        chunk = sock.recv(size - len(buf))
        if not chunk:
            raise TransportError("connection closed mid-frame" if buf else "connection closed")
        buf += chunk
    return bytes(buf)


def recv_frame(sock: socket.socket) -> dict:
    (size,) = HEADER.unpack(_recv_exact(sock, HEADER.size))
    if size > MAX_FRAME:
        raise TransportError(f"frame of {size} bytes exceeds limit")
    return json.loads(_recv_exact(sock, size).decode("utf-8"))


class _SessionHandler(socketserver.BaseRequestHandler):
    """One plant session per connection; nothing is shared between sessions."""

    def handle(self):
        from .protocol import CloudEndpoint

        endpoint = CloudEndpoint(self.server.solver_cfg)
        while True:
            try:
                msg = recv_frame(self.request)
            except TransportError:
                return
            try:
                reply = endpoint.handle(msg)
            except Exception as exc:  # report to the plant, then drop the session
                log.exception("session failed")
                send_frame(self.request, {"type": "error", "error": str(exc)})
                return
            send_frame(self.request, reply)
            if reply.get("type") == "closed":
                return


class CloudServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, cfg: SolverConfig | None = None):
        self.solver_cfg = cfg
        super().__init__(address, _SessionHandler)


def start_server(host: str = "127.0.0.1", port: int = 0, cfg: SolverConfig | None = None):
    """Serve in a background thread; returns ``(server, (host, port))``."""
    server = CloudServer((host, port), cfg)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server, server.server_address[:2]


def parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host, int(port)


class TcpChannel:
    def __init__(self, address, timeout: float = 60.0):
        if isinstance(address, str):
            address = parse_address(address)
        try:
            self.sock = socket.create_connection(tuple(address), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {address}: {exc}") from exc

    def request(self, msg: dict) -> dict:
        send_frame(self.sock, msg)
        reply = recv_frame(self.sock)
        if reply.get("type") == "error":
            raise TransportError(f"cloud error: {reply.get('error')}")
        return reply

    def close(self) -> None:
        self.sock.close()
