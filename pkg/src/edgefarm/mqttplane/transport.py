"""Byte transports: TCP sockets for real deployments, in-memory duplex
pipes (with optional seeded frame loss) for tests and in-process wiring.

Contract: send() writes one whole MQTT packet per call; recv() returns
bytes, b"" on EOF, or None on timeout. The lossy pipe drops entire send()
calls, which models per-frame loss without desynchronizing the stream
because MQTT packets are self-delimiting.
"""

from __future__ import annotations

import socket
import threading
from collections import deque

import numpy as np

__all__ = ["TransportClosed", "TcpTransport", "PipeTransport", "pipe_pair", "tcp_connect"]


class TransportClosed(ConnectionError):
    pass


class TcpTransport:
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._send_lock = threading.Lock()
        self._closed = False

    def send(self, data: bytes) -> None:
        try:
            with self._send_lock:
                self._sock.sendall(data)
        except OSError as e:
            raise TransportClosed(str(e)) from None

    def recv(self, max_bytes: int = 4096, timeout: float | None = None):
        try:
            self._sock.settimeout(timeout)
            return self._sock.recv(max_bytes)
        except (socket.timeout, TimeoutError):
            return None
        except OSError:
            return b""

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._sock.close()


def tcp_connect(host: str, port: int, timeout: float = 5.0) -> TcpTransport:
    return TcpTransport(socket.create_connection((host, port), timeout=timeout))


class PipeTransport:
    """One end of an in-memory duplex byte pipe.

    spare_first exempts the first N frames of this end from loss, so a
    test can let the CONNECT/CONNACK handshake through and apply loss to
    steady-state traffic only.
    """

    def __init__(self, loss_rate: float = 0.0, loss_seed: int = 0, spare_first: int = 0):
        self._rx = deque()
        self._cond = threading.Condition()
        self._eof = False
        self.peer: "PipeTransport | None" = None
        self._loss_rate = loss_rate
        self._loss_rng = np.random.default_rng(loss_seed)
        self._spare_first = spare_first
        self.frames_sent = 0
        self.frames_dropped = 0

    def send(self, data: bytes) -> None:
        peer = self.peer
        if peer is None:
            raise TransportClosed("pipe has no peer")
        with peer._cond:
            if peer._eof or self._eof:
                raise TransportClosed("pipe closed")
            self.frames_sent += 1
            lossy = self._loss_rate > 0 and self.frames_sent > self._spare_first
            if lossy and self._loss_rng.random() < self._loss_rate:
                self.frames_dropped += 1
                return
            peer._rx.append(bytes(data))
            peer._cond.notify_all()

    def recv(self, max_bytes: int = 4096, timeout: float | None = None):
        with self._cond:
            if not self._rx and not self._eof:
                self._cond.wait(timeout)
            if self._rx:
                chunk = self._rx.popleft()
                if len(chunk) > max_bytes:
                    self._rx.appendleft(chunk[max_bytes:])
                    chunk = chunk[:max_bytes]
                return chunk
            if self._eof:
                return b""
            return None

    def close(self) -> None:
        for end in (self, self.peer):
            if end is None:
                continue
            with end._cond:
                end._eof = True
                end._cond.notify_all()


def pipe_pair(loss_rate: float = 0.0, loss_seed: int = 0, spare_first: int = 0):
    """Two connected pipe ends. loss_rate applies to both directions, with
    independent seeded streams so drops are reproducible."""
    a = PipeTransport(loss_rate=loss_rate, loss_seed=loss_seed, spare_first=spare_first)
    b = PipeTransport(loss_rate=loss_rate, loss_seed=loss_seed + 1, spare_first=spare_first)
    a.peer = b
    b.peer = a
    return a, b
