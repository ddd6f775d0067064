"""MQTT client with auto-reconnect, offline queueing, and QoS-1 retries.

One network thread owns the connection: it reconnects with exponential
backoff (0.5 s doubling to a 30 s cap), re-subscribes, retransmits
unacknowledged QoS-1 publishes with DUP, and drains the outbound queue.
publish() is safe from any thread. While disconnected, QoS-1 publishes
queue up to queue_limit (drop-oldest, counted); QoS-0 publishes are
dropped and counted.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import deque

from . import codec
from .codec import (
    Connack,
    Connect,
    Disconnect,
    MqttProtocolError,
    Pingreq,
    Pingresp,
    Puback,
    Publish,
    Suback,
    Subscribe,
    Unsubscribe,
    encode_packet,
)
from .transport import TransportClosed, tcp_connect

log = logging.getLogger(__name__)

__all__ = ["Client"]

_TICK_S = 0.05


class Client:
    def __init__(
        self,
        client_id: str,
        host: str = "127.0.0.1",
        port: int = 1883,
        connect_fn=None,
        keep_alive: int = 30,
        clean_session: bool = False,
        will: Publish | None = None,
        username: str | None = None,
        password: bytes | None = None,
        on_message=None,
        on_connect=None,
        backoff_initial_s: float = 0.5,
        backoff_max_s: float = 30.0,
        queue_limit: int = 1024,
        retry_interval_s: float = 2.0,
        connect_timeout_s: float = 5.0,
    ):
        self.client_id = client_id
        self.keep_alive = keep_alive
        self.clean_session = clean_session
        self.will = will
        self.username = username
        self.password = password
        self.on_message = on_message
        self.on_connect = on_connect
        self.backoff_initial_s = backoff_initial_s
        self.backoff_max_s = backoff_max_s
        self.queue_limit = queue_limit
        self.retry_interval_s = retry_interval_s
        self.connect_timeout_s = connect_timeout_s
        self._connect_fn = connect_fn or (lambda: tcp_connect(host, port))

        self._lock = threading.RLock()
        self._queue: deque[Publish] = deque()  # not yet handed to the transport
        self._pending: dict[int, list] = {}  # pid -> [Publish, deadline]
        self._sub_pending: dict[int, list] = {}  # pid -> [Subscribe, deadline]
        self._subs: dict[str, int] = {}
        self._next_pid = 1
        self._transport = None
        self._connected = threading.Event()
        self._running = False
        self._thread: threading.Thread | None = None
        self.dropped_qos0 = 0
        self.dropped_qos1 = 0
        self.reconnects = 0

    # -- public api --------------------------------------------------------

    def start(self) -> "Client":
        if self._running:
            return self
        self._running = True
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name=f"mqtt-client-{self.client_id}")
        self._thread.start()
        return self

    def stop(self, timeout: float = 5.0) -> None:
        self._running = False
        t = self._transport
        if t is not None and self._connected.is_set():
            try:
                t.send(encode_packet(Disconnect()))
            except (TransportClosed, OSError):
                pass
        if t is not None:
            t.close()
        if self._thread is not None:
            self._thread.join(timeout=timeout)

    @property
    def connected(self) -> bool:
        return self._connected.is_set()

    def wait_connected(self, timeout: float | None = None) -> bool:
        return self._connected.wait(timeout)

    def publish(self, topic: str, payload: bytes, qos: int = 0, retain: bool = False) -> bool:
        """Queue (or drop, per QoS) one message. Returns False when dropped."""
        if qos not in (0, 1):
            raise MqttProtocolError("qos must be 0 or 1")
        pub = Publish(topic=topic, payload=payload, qos=qos, retain=retain)
        with self._lock:
            if qos == 0 and not self._connected.is_set():
                self.dropped_qos0 += 1
                return False
            if qos == 1:
                n_q1 = sum(1 for p in self._queue if p.qos == 1)
                if n_q1 >= self.queue_limit:
                    for i, p in enumerate(self._queue):
                        if p.qos == 1:
                            del self._queue[i]
                            self.dropped_qos1 += 1
                            break
            self._queue.append(pub)
        return True

    @property
    def dropped_messages(self) -> int:
        return self.dropped_qos0 + self.dropped_qos1

    def subscribe(self, filt: str, qos: int = 1) -> None:
        """Record the subscription; duplicates keep the highest QoS."""
        with self._lock:
            current = self._subs.get(filt)
            self._subs[filt] = qos if current is None else max(current, qos)
            new_qos = self._subs[filt]
        if self._connected.is_set():
            self._send_subscribe([(filt, new_qos)])

    def _send_subscribe(self, topics) -> bool:
        """SUBSCRIBE tracked until SUBACK so a lost frame is retried."""
        pid = self._alloc_pid()
        pkt = Subscribe(packet_id=pid, topics=topics)
        with self._lock:
            self._sub_pending[pid] = [pkt, time.monotonic() + self.retry_interval_s]
        return self._try_send(pkt)

    def unsubscribe(self, filt: str) -> None:
        with self._lock:
            self._subs.pop(filt, None)
        if self._connected.is_set():
            self._try_send(Unsubscribe(packet_id=self._alloc_pid(), topics=[filt]))

    def flush(self, timeout: float = 5.0) -> bool:
        """Wait until the queue is drained and all QoS-1 publishes acked."""
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            with self._lock:
                if not self._queue and not self._pending:
                    return True
            time.sleep(0.01)
        return False

    def wait_subscriptions(self, timeout: float = 5.0) -> bool:
        """Wait until every outstanding SUBSCRIBE has been acknowledged."""
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            with self._lock:
                if not self._sub_pending:
                    return True
            time.sleep(0.01)
        return False

    @property
    def queued_count(self) -> int:
        with self._lock:
            return len(self._queue) + len(self._pending)

    # -- internals -----------------------------------------------------------

    def _alloc_pid(self) -> int:
        with self._lock:
            for _ in range(65535):
                pid = self._next_pid
                self._next_pid = pid % 65535 + 1
                if pid not in self._pending and pid not in self._sub_pending:
                    return pid
        raise MqttProtocolError("no free packet ids")

    def _try_send(self, packet) -> bool:
        t = self._transport
        if t is None:
            return False
        try:
            t.send(encode_packet(packet))
            self._last_tx = time.monotonic()
            return True
        except (TransportClosed, OSError):
            return False

    def _run(self) -> None:
        backoff = self.backoff_initial_s
        while self._running:
            try:
                transport = self._connect_fn()
            except OSError:
                if self._sleep_running(backoff):
                    backoff = min(backoff * 2, self.backoff_max_s)
                continue
            try:
                if not self._handshake(transport):
                    transport.close()
                    if self._sleep_running(backoff):
                        backoff = min(backoff * 2, self.backoff_max_s)
                    continue
            except (TransportClosed, MqttProtocolError, OSError):
                transport.close()
                if self._sleep_running(backoff):
                    backoff = min(backoff * 2, self.backoff_max_s)
                continue

            backoff = self.backoff_initial_s
            self._session_loop(transport)
            transport.close()
            self._connected.clear()
            self._transport = None
            with self._lock:
                self._queue = deque(p for p in self._queue if p.qos == 1)

    def _sleep_running(self, seconds: float) -> bool:
        deadline = time.monotonic() + seconds
        while self._running and time.monotonic() < deadline:
            time.sleep(min(0.05, seconds))
        return self._running

    def _handshake(self, transport) -> bool:
        connect = Connect(
            client_id=self.client_id,
            keep_alive=self.keep_alive,
            clean_session=self.clean_session,
            username=self.username,
            password=self.password,
        )
        if self.will is not None:
            connect.will_topic = self.will.topic
            connect.will_payload = self.will.payload
            connect.will_qos = self.will.qos
            connect.will_retain = self.will.retain
        transport.send(encode_packet(connect))
        buf = bytearray()
        deadline = time.monotonic() + self.connect_timeout_s
        while time.monotonic() < deadline:
            pkt, consumed = codec.decode_packet(bytes(buf))
            if pkt is not None:
                del buf[:consumed]
                if isinstance(pkt, Connack) and pkt.return_code == codec.CONNACK_ACCEPTED:
                    self._buf = buf
                    return True
                return False
            chunk = transport.recv(4096, timeout=0.2)
            if chunk == b"":
                return False
            if chunk:
                buf.extend(chunk)
        return False

    def _session_loop(self, transport) -> None:
        self._transport = transport
        self._last_tx = time.monotonic()
        self._last_rx = time.monotonic()
        buf = getattr(self, "_buf", bytearray())
        self._connected.set()
        self.reconnects += 1

        with self._lock:
            self._sub_pending.clear()
            subs = list(self._subs.items())
            pending = sorted(self._pending.items())
        if subs and not self._send_subscribe(subs):
            return
        for pid, entry in pending:
            entry[0] = Publish(topic=entry[0].topic, payload=entry[0].payload,
                               qos=1, retain=entry[0].retain, dup=True, packet_id=pid)
            entry[1] = time.monotonic() + self.retry_interval_s
            if not self._try_send(entry[0]):
                return
        if self.on_connect is not None:
            try:
                self.on_connect(self)
            except Exception:
                log.exception("on_connect callback failed")

        while self._running:
            if not self._drain_queue():
                return
            chunk = transport.recv(65536, timeout=_TICK_S)
            if chunk == b"":
                return
            if chunk:
                self._last_rx = time.monotonic()
                buf.extend(chunk)
                while True:
                    try:
                        pkt, consumed = codec.decode_packet(bytes(buf))
                    except MqttProtocolError:
                        return
                    if pkt is None:
                        break
                    del buf[:consumed]
                    self._handle(pkt)
            now = time.monotonic()
            if self.keep_alive:
                if now - self._last_rx > self.keep_alive * 1.5:
                    return  # broker looks dead; reconnect
                if now - self._last_tx > self.keep_alive * 0.5:
                    if not self._try_send(Pingreq()):
                        return
            with self._lock:
                stale = [e for e in self._pending.values() if e[1] <= now]
                stale_subs = [e for e in self._sub_pending.values() if e[1] <= now]
            for entry in stale:
                entry[0] = Publish(topic=entry[0].topic, payload=entry[0].payload, qos=1,
                                   retain=entry[0].retain, dup=True, packet_id=entry[0].packet_id)
                entry[1] = now + self.retry_interval_s
                if not self._try_send(entry[0]):
                    return
            for entry in stale_subs:
                entry[1] = now + self.retry_interval_s
                if not self._try_send(entry[0]):
                    return

    def _drain_queue(self) -> bool:
        while True:
            with self._lock:
                if not self._queue:
                    return True
                pub = self._queue.popleft()
                if pub.qos == 1:
                    pid = self._alloc_pid()
                    pub = Publish(topic=pub.topic, payload=pub.payload, qos=1,
                                  retain=pub.retain, packet_id=pid)
                    self._pending[pid] = [pub, time.monotonic() + self.retry_interval_s]
            if not self._try_send(pub):
                return False

    def _handle(self, pkt) -> None:
        if isinstance(pkt, Publish):
            if pkt.qos == 1 and pkt.packet_id:
                self._try_send(Puback(packet_id=pkt.packet_id))
            if self.on_message is not None:
                try:
                    self.on_message(pkt.topic, pkt.payload, pkt.qos, pkt.retain, pkt.dup)
                except Exception:
                    log.exception("on_message callback failed")
        elif isinstance(pkt, Puback):
            with self._lock:
                self._pending.pop(pkt.packet_id, None)
        elif isinstance(pkt, Suback):
            with self._lock:
                self._sub_pending.pop(pkt.packet_id, None)
        elif isinstance(pkt, Pingresp):
            pass
        # anything else from the broker is ignored at this QoS level
