"""In-process and TCP transports carrying text lines."""
from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from typing import Callable, Optional

log = logging.getLogger(__name__)

_CLOSED = object()


class NodeUnreachable(ConnectionError):
    pass


class QueueConnection:
    """One end of an in-process duplex pipe."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, name: str = ""):
        self._in = inbox
        self._out = outbox
        self.name = name
        self.closed = False

    def send(self, line: str):
        if self.closed:
            raise ConnectionError("connection closed")
        self._out.put(line)

    def recv(self) -> Optional[str]:
        item = self._in.get()
        if item is _CLOSED:
            self._in.put(_CLOSED)
            return None
        return item

    def close(self):
        if not self.closed:
            self.closed = True
            self._out.put(_CLOSED)
            self._in.put(_CLOSED)


def queue_pair(name: str = "") -> tuple[QueueConnection, QueueConnection]:
    a, b = queue.Queue(), queue.Queue()
    return QueueConnection(a, b, name), QueueConnection(b, a, name)


class SocketConnection:
    def __init__(self, sock: socket.socket, name: str = ""):
        self.sock = sock
        self.name = name
        self._reader = sock.makefile("r", encoding="utf-8", newline="\n")
        self._lock = threading.Lock()
        self.closed = False

    def send(self, line: str):
        data = (line + "\n").encode()
        with self._lock:
            self.sock.sendall(data)

    def recv(self) -> Optional[str]:
        try:
            line = self._reader.readline()
        except (OSError, ValueError):
            return None
        return line.rstrip("\n") if line else None

    def close(self):
        if self.closed:
            return
        self.closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint {text!r} is not host:port")
    return host or "127.0.0.1", int(port)


def connect(endpoint: str, attempts: int = 5, backoff: float = 0.05, timeout: float = 2.0) -> SocketConnection:
    """Connect with exponential backoff; raises :class:`NodeUnreachable` after ``attempts`` failures."""
    host, port = parse_endpoint(endpoint)
    delay = backoff
    last = None
    for i in range(attempts):
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            sock.settimeout(None)
            return SocketConnection(sock, endpoint)
        except OSError as exc:
            last = exc
            log.debug("connect %s attempt %d failed: %s", endpoint, i + 1, exc)
            if i + 1 < attempts:
                time.sleep(delay)
                delay *= 2
    raise NodeUnreachable(f"{endpoint} unreachable after {attempts} attempts: {last}")


class Listener:
    """Accepts TCP connections and hands each to ``on_connect`` on a daemon thread."""

    def __init__(self, endpoint: str, on_connect: Callable[[SocketConnection], None]):
        host, port = parse_endpoint(endpoint)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind((host, port))
        self.sock.listen()
        self.on_connect = on_connect
        self.address = "{}:{}".format(*self.sock.getsockname()[:2])
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def _loop(self):
        while True:
            try:
                sock, _ = self.sock.accept()
            except OSError:
                return
            self.on_connect(SocketConnection(sock, self.address))

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
