"""Message transports between one server and ``n`` clients.

Both transports move ``FTT1``-encoded bytes, so a message that crosses
either one arrives as a fresh decoded copy.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
from abc import ABC, abstractmethod

from .wire import Message, decode, encode, frame, read_frame


class TransportClosed(ConnectionError):
    pass


class Transport(ABC):
    n: int

    @abstractmethod
    def client_send(self, client: int, msg: Message) -> None: ...

    @abstractmethod
    def client_recv(self, client: int, timeout: float) -> Message:
        """Next message for ``client``; raises ``queue.Empty`` on timeout."""

    @abstractmethod
    def server_send(self, client: int, msg: Message) -> None: ...

    @abstractmethod
    def server_recv(self, timeout: float) -> Message:
        """Next message from any client; raises ``queue.Empty`` on timeout."""

    def broadcast(self, msg: Message) -> None:
        for c in range(self.n):
            self.server_send(c, msg)

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class InProcessTransport(Transport):
    def __init__(self, n: int):
        self.n = n
        self._to_server: queue.Queue[bytes] = queue.Queue()
        self._to_client = [queue.Queue() for _ in range(n)]

    def client_send(self, client, msg):
        self._to_server.put(encode(msg))

    def client_recv(self, client, timeout):
        return decode(self._to_client[client].get(timeout=timeout))

    def server_send(self, client, msg):
        self._to_client[client].put(encode(msg))

    def server_recv(self, timeout):
        return decode(self._to_server.get(timeout=timeout))


def _reader(sock: socket.socket):
    def read_exactly(k: int) -> bytes:
        buf = bytearray()
        while len(buf) < k:
            chunk = sock.recv(k - len(buf))
            if not chunk:
                raise TransportClosed("peer closed the connection")
            buf += chunk
        return bytes(buf)
    return read_exactly


class TcpTransport(Transport):
    """Loopback TCP: one connection per client, u32 length-prefixed frames."""

    def __init__(self, n: int, host: str = "127.0.0.1"):
        self.n = n
        self._listener = socket.create_server((host, 0))
        port = self._listener.getsockname()[1]
        self._client_socks = []
        self._server_socks: list[socket.socket | None] = [None] * n
        for c in range(n):
            s = socket.create_connection((host, port))
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            s.sendall(struct.pack("<I", c))
            self._client_socks.append(s)
        for _ in range(n):
            conn, _ = self._listener.accept()
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            (cid,) = struct.unpack("<I", _reader(conn)(4))
            self._server_socks[cid] = conn
        self._inbox: queue.Queue[bytes] = queue.Queue()
        self._client_inbox = [queue.Queue() for _ in range(n)]
        self._send_locks = [threading.Lock() for _ in range(2 * n)]
        self._threads = []
        for c in range(n):
            self._spawn(self._server_socks[c], self._inbox)
            self._spawn(self._client_socks[c], self._client_inbox[c])

    def _spawn(self, sock, sink: queue.Queue):
        def pump():
            read = _reader(sock)
            try:
                while True:
                    sink.put(read_frame(read))
            except (TransportClosed, OSError):
                return
        t = threading.Thread(target=pump, daemon=True)
        t.start()
        self._threads.append(t)

    def client_send(self, client, msg):
        with self._send_locks[client]:
            self._client_socks[client].sendall(frame(encode(msg)))

    def client_recv(self, client, timeout):
        return decode(self._client_inbox[client].get(timeout=timeout))

    def server_send(self, client, msg):
        with self._send_locks[self.n + client]:
            self._server_socks[client].sendall(frame(encode(msg)))

    def server_recv(self, timeout):
        return decode(self._inbox.get(timeout=timeout))

    def close(self):
        for s in self._client_socks + self._server_socks + [self._listener]:
            try:
                s.close()
            except OSError:
                pass


def make_transport(kind: str, n: int) -> Transport:
    if kind == "inproc":
        return InProcessTransport(n)
    if kind == "tcp":
        return TcpTransport(n)
    raise ValueError(f"unknown transport {kind!r} (expected 'inproc' or 'tcp')")
