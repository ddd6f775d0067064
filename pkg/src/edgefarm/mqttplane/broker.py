"""Minimal MQTT 3.1.1 broker: QoS 0/1 routing, retained messages,
last-will, keep-alive enforcement, and per-session QoS-1 redelivery.

The subscription table and retained store are guarded by one lock, so
observable ordering per publisher-to-subscriber pair is FIFO. Sessions
with clean_session=False survive disconnects in memory: pending QoS-1
messages are retransmitted (DUP) when the same client id reconnects.
Nothing persists across broker restarts.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import dataclass

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
    Unsuback,
    Unsubscribe,
    decode_varint,
    encode_packet,
)
from .topics import PayloadError, topic_matches, validate_filter
from .transport import TcpTransport, TransportClosed

log = logging.getLogger(__name__)

__all__ = ["BrokerLimits", "Broker", "BrokerServer"]

CONNECT_TIMEOUT_S = 10.0


@dataclass
class BrokerLimits:
    max_connections: int = 64
    max_packet_size: int = 1 << 20
    retry_interval_s: float = 2.0


class _Session:
    def __init__(self, client_id: str, clean_session: bool):
        self.client_id = client_id
        self.clean_session = clean_session
        self.subscriptions: dict[str, int] = {}
        self.pending_out: dict[int, list] = {}  # pid -> [Publish, deadline]
        self.next_pid = 1
        self.will: Publish | None = None
        self.keep_alive = 0
        self.transport = None
        self.epoch = 0

    def alloc_pid(self) -> int:
        for _ in range(65535):
            pid = self.next_pid
            self.next_pid = pid % 65535 + 1
            if pid not in self.pending_out:
                return pid
        raise MqttProtocolError("no free packet ids")


class Broker:
    """Transport-agnostic broker core; serve_transport() runs one connection."""

    def __init__(self, limits: BrokerLimits | None = None, auth=None):
        self.limits = limits or BrokerLimits()
        self.auth = auth  # optional callable(username, password) -> bool
        self.lock = threading.RLock()
        self.sessions: dict[str, _Session] = {}
        self.retained: dict[str, Publish] = {}
        self.stats = {
            "connects": 0,
            "refused": 0,
            "published": 0,
            "delivered": 0,
            "retransmits": 0,
            "wills_published": 0,
        }
        self._running = True
        self._housekeeper = threading.Thread(target=self._retransmit_loop, daemon=True)
        self._housekeeper.start()

    # -- plumbing ---------------------------------------------------------

    def stop(self) -> None:
        self._running = False
        with self.lock:
            transports = [s.transport for s in self.sessions.values() if s.transport]
        for t in transports:
            t.close()

    def _send(self, session: _Session, packet) -> bool:
        t = session.transport
        if t is None:
            return False
        try:
            t.send(encode_packet(packet))
            return True
        except (TransportClosed, OSError):
            return False

    def _connected_count(self) -> int:
        return sum(1 for s in self.sessions.values() if s.transport is not None)

    # -- routing ----------------------------------------------------------

    def _route(self, pub: Publish) -> None:
        """Deliver to every matching subscription at min(pub.qos, sub qos)."""
        with self.lock:
            self.stats["published"] += 1
            targets = []
            for session in self.sessions.values():
                best_qos = None
                for filt, sub_qos in session.subscriptions.items():
                    if topic_matches(filt, pub.topic):
                        eff = min(pub.qos, sub_qos)
                        best_qos = eff if best_qos is None else max(best_qos, eff)
                if best_qos is not None:
                    targets.append((session, best_qos))
            for session, eff_qos in targets:
                self._deliver(session, pub, eff_qos, retain_flag=False)

    def _deliver(self, session: _Session, pub: Publish, eff_qos: int, retain_flag: bool) -> None:
        if eff_qos == 0:
            if session.transport is not None:
                if self._send(session, Publish(topic=pub.topic, payload=pub.payload,
                                               qos=0, retain=retain_flag)):
                    self.stats["delivered"] += 1
            return
        pid = session.alloc_pid()
        out = Publish(topic=pub.topic, payload=pub.payload, qos=1,
                      retain=retain_flag, packet_id=pid)
        session.pending_out[pid] = [out, time.monotonic() + self.limits.retry_interval_s]
        if session.transport is not None and self._send(session, out):
            self.stats["delivered"] += 1

    def _handle_retain(self, pub: Publish) -> None:
        if not pub.retain:
            return
        with self.lock:
            if len(pub.payload) == 0:
                self.retained.pop(pub.topic, None)
            else:
                self.retained[pub.topic] = Publish(
                    topic=pub.topic, payload=pub.payload, qos=pub.qos, retain=True
                )

    def _publish_will(self, session: _Session) -> None:
        will = session.will
        if will is None:
            return
        session.will = None
        self.stats["wills_published"] += 1
        self._handle_retain(will)
        self._route(will)

    def _retransmit_loop(self) -> None:
        while self._running:
            time.sleep(max(0.01, self.limits.retry_interval_s / 4))
            now = time.monotonic()
            with self.lock:
                work = []
                for session in self.sessions.values():
                    if session.transport is None:
                        continue
                    for pid, entry in session.pending_out.items():
                        if entry[1] <= now:
                            entry[0] = Publish(
                                topic=entry[0].topic, payload=entry[0].payload,
                                qos=1, retain=entry[0].retain, dup=True, packet_id=pid,
                            )
                            entry[1] = now + self.limits.retry_interval_s
                            work.append((session, entry[0]))
                for session, pkt in work:
                    self.stats["retransmits"] += 1
                    self._send(session, pkt)

    # -- connection handling ------------------------------------------------

    def serve_transport(self, transport) -> None:
        """Run one client connection to completion. Blocking; call from a
        dedicated thread."""
        try:
            self._serve(transport)
        finally:
            transport.close()

    def _read_packet(self, transport, buf: bytearray, deadline: float | None):
        """One packet from the stream, enforcing the size limit.
        Returns (packet, None) or (None, reason) on EOF/timeout."""
        while True:
            if len(buf) >= 2:
                vl = decode_varint(bytes(buf), 1)
                if vl is not None and vl[0] > self.limits.max_packet_size:
                    raise MqttProtocolError(f"packet of {vl[0]} bytes exceeds the size limit")
            pkt_info = codec.decode_packet(bytes(buf))
            if pkt_info[0] is not None:
                pkt, consumed = pkt_info
                del buf[:consumed]
                return pkt, None
            timeout = None
            if deadline is not None:
                timeout = deadline - time.monotonic()
                if timeout <= 0:
                    return None, "timeout"
            chunk = transport.recv(65536, timeout=timeout)
            if chunk is None:
                return None, "timeout"
            if chunk == b"":
                return None, "eof"
            buf.extend(chunk)

    def _serve(self, transport) -> None:
        buf = bytearray()
        try:
            pkt, reason = self._read_packet(transport, buf, time.monotonic() + CONNECT_TIMEOUT_S)
        except (MqttProtocolError, TransportClosed):
            return
        if pkt is None or not isinstance(pkt, Connect):
            return

        if self.auth is not None and not self.auth(pkt.username, pkt.password):
            try:
                transport.send(encode_packet(Connack(return_code=codec.CONNACK_REFUSED_BAD_CREDENTIALS)))
            except (TransportClosed, OSError):
                pass
            self.stats["refused"] += 1
            return

        with self.lock:
            if self._connected_count() >= self.limits.max_connections:
                try:
                    transport.send(encode_packet(Connack(return_code=codec.CONNACK_REFUSED_UNAVAILABLE)))
                except (TransportClosed, OSError):
                    pass
                self.stats["refused"] += 1
                return
            session = self.sessions.get(pkt.client_id)
            session_present = session is not None and not pkt.clean_session
            if session is None or pkt.clean_session:
                session = _Session(pkt.client_id, pkt.clean_session)
                old = self.sessions.get(pkt.client_id)
                if old is not None and old.transport is not None:
                    old.transport.close()  # takeover
                self.sessions[pkt.client_id] = session
            elif session.transport is not None:
                session.transport.close()  # takeover, supersedes the old link
            session.epoch += 1
            epoch = session.epoch
            session.transport = transport
            session.keep_alive = pkt.keep_alive
            session.will = None
            if pkt.will_topic is not None:
                session.will = Publish(
                    topic=pkt.will_topic, payload=pkt.will_payload,
                    qos=pkt.will_qos, retain=pkt.will_retain,
                )
            self.stats["connects"] += 1

        try:
            transport.send(encode_packet(Connack(session_present=session_present)))
        except (TransportClosed, OSError):
            self._connection_closed(session, epoch, graceful=False)
            return

        # redeliver anything still unacknowledged from a previous connection
        with self.lock:
            for pid, entry in sorted(session.pending_out.items()):
                entry[0] = Publish(topic=entry[0].topic, payload=entry[0].payload,
                                   qos=1, retain=entry[0].retain, dup=True, packet_id=pid)
                entry[1] = time.monotonic() + self.limits.retry_interval_s
                self.stats["retransmits"] += 1
                self._send(session, entry[0])

        graceful = False
        try:
            while self._running:
                deadline = None
                if session.keep_alive:
                    deadline = time.monotonic() + session.keep_alive * 1.5
                pkt, reason = self._read_packet(transport, buf, deadline)
                if pkt is None:
                    break  # eof or keep-alive timeout: ungraceful
                if isinstance(pkt, Disconnect):
                    graceful = True
                    break
                self._dispatch(session, pkt)
        except (MqttProtocolError, PayloadError, TransportClosed) as e:
            log.debug("session %s dropped: %s", session.client_id, e)
        finally:
            self._connection_closed(session, epoch, graceful)

    def _dispatch(self, session: _Session, pkt) -> None:
        if isinstance(pkt, Publish):
            self._handle_retain(pkt)
            self._route(pkt)
            if pkt.qos == 1:
                self._send(session, Puback(packet_id=pkt.packet_id))
        elif isinstance(pkt, Puback):
            with self.lock:
                session.pending_out.pop(pkt.packet_id, None)
        elif isinstance(pkt, Subscribe):
            codes = []
            new_filters = []
            with self.lock:
                for filt, qos in pkt.topics:
                    try:
                        validate_filter(filt)
                    except PayloadError:
                        codes.append(0x80)
                        continue
                    session.subscriptions[filt] = qos
                    new_filters.append((filt, qos))
                    codes.append(qos)
            self._send(session, Suback(packet_id=pkt.packet_id, return_codes=codes))
            with self.lock:
                for filt, qos in new_filters:
                    for topic, retained in list(self.retained.items()):
                        if topic_matches(filt, topic):
                            self._deliver(session, retained, min(retained.qos, qos), retain_flag=True)
        elif isinstance(pkt, Unsubscribe):
            with self.lock:
                for filt in pkt.topics:
                    session.subscriptions.pop(filt, None)
            self._send(session, Unsuback(packet_id=pkt.packet_id))
        elif isinstance(pkt, Pingreq):
            self._send(session, Pingresp())
        elif isinstance(pkt, (Connect,)):
            raise MqttProtocolError("duplicate CONNECT")
        # CONNACK/SUBACK/UNSUBACK/PINGRESP from a client are ignored

    def _connection_closed(self, session: _Session, epoch: int, graceful: bool) -> None:
        with self.lock:
            if session.epoch != epoch:
                return  # superseded by a newer connection; it owns the state now
            session.transport = None
            if graceful:
                session.will = None
            else:
                self._publish_will(session)
            if session.clean_session:
                self.sessions.pop(session.client_id, None)


class BrokerServer:
    """TCP front end: accepts sockets and hands each to the broker core."""

    def __init__(self, host: str = "127.0.0.1", port: int = 1883,
                 limits: BrokerLimits | None = None, auth=None):
        self.host = host
        self.requested_port = port
        self.broker = Broker(limits=limits, auth=auth)
        self._listener: socket.socket | None = None
        self._accept_thread: threading.Thread | None = None
        self._threads: list[threading.Thread] = []

    @property
    def port(self) -> int:
        return self._listener.getsockname()[1] if self._listener else self.requested_port

    def start(self) -> "BrokerServer":
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((self.host, self.requested_port))
        self._listener.listen(32)
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self

    def _accept_loop(self) -> None:
        while True:
            try:
                sock, _addr = self._listener.accept()
            except OSError:
                return  # listener closed
            t = threading.Thread(
                target=self.broker.serve_transport, args=(TcpTransport(sock),), daemon=True
            )
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        self.broker.stop()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2)
        for t in self._threads:
            t.join(timeout=2)
