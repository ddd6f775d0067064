"""MQTT 3.1.1 wire codec: packet types, varint framing, encode/decode.

Covers the QoS 0/1 subset this system uses: CONNECT/CONNACK, PUBLISH/
PUBACK, SUBSCRIBE/SUBACK, UNSUBSCRIBE/UNSUBACK, PINGREQ/PINGRESP and
DISCONNECT. Decoding is incremental: feed it a byte buffer and it either
returns a packet plus the consumed length, or (None, 0) meaning more
bytes are needed. Anything malformed raises MqttProtocolError.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

__all__ = [
    "MqttProtocolError",
    "PacketType",
    "encode_varint",
    "decode_varint",
    "encode_packet",
    "decode_packet",
    "Connect",
    "Connack",
    "Publish",
    "Puback",
    "Subscribe",
    "Suback",
    "Unsubscribe",
    "Unsuback",
    "Pingreq",
    "Pingresp",
    "Disconnect",
]

MAX_REMAINING_LENGTH = 268_435_455

CONNACK_ACCEPTED = 0
CONNACK_REFUSED_PROTOCOL = 1
CONNACK_REFUSED_IDENTIFIER = 2
CONNACK_REFUSED_UNAVAILABLE = 3
CONNACK_REFUSED_BAD_CREDENTIALS = 4
CONNACK_REFUSED_NOT_AUTHORIZED = 5


class MqttProtocolError(ValueError):
    pass


class PacketType:
    CONNECT = 1
    CONNACK = 2
    PUBLISH = 3
    PUBACK = 4
    SUBSCRIBE = 8
    SUBACK = 9
    UNSUBSCRIBE = 10
    UNSUBACK = 11
    PINGREQ = 12
    PINGRESP = 13
    DISCONNECT = 14


def encode_varint(n: int) -> bytes:
    """Remaining-length encoding: 7 bits per byte, MSB = continuation."""
    if not (0 <= n <= MAX_REMAINING_LENGTH):
        raise MqttProtocolError(f"remaining length {n} out of range")
    out = bytearray()
    while True:
        byte = n % 128
        n //= 128
        if n > 0:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def decode_varint(buf: bytes, offset: int = 0):
    """Returns (value, bytes_consumed) or None when the buffer is short.
    Rejects encodings longer than 4 bytes."""
    value = 0
    multiplier = 1
    for i in range(4):
        if offset + i >= len(buf):
            return None
        byte = buf[offset + i]
        value += (byte & 0x7F) * multiplier
        if not byte & 0x80:
            return value, i + 1
        multiplier *= 128
    raise MqttProtocolError("malformed remaining length (5-byte encoding)")


def _enc_str(s: str) -> bytes:
    data = s.encode("utf-8")
    if len(data) > 0xFFFF:
        raise MqttProtocolError("string too long")
    return struct.pack(">H", len(data)) + data


def _enc_bytes(b: bytes) -> bytes:
    if len(b) > 0xFFFF:
        raise MqttProtocolError("binary field too long")
    return struct.pack(">H", len(b)) + b


class _Body:
    """Cursor over a packet body; overruns are protocol errors."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MqttProtocolError("packet body shorter than declared")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def string(self) -> str:
        n = self.u16()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise MqttProtocolError(f"invalid UTF-8 string: {e}") from None

    def binary(self) -> bytes:
        return self.take(self.u16())

    def rest(self) -> bytes:
        out = self.data[self.pos :]
        self.pos = len(self.data)
        return out

    def expect_end(self) -> None:
        if self.pos != len(self.data):
            raise MqttProtocolError("trailing bytes in packet body")


@dataclass
class Connect:
    client_id: str
    keep_alive: int = 60
    clean_session: bool = True
    will_topic: str | None = None
    will_payload: bytes = b""
    will_qos: int = 0
    will_retain: bool = False
    username: str | None = None
    password: bytes | None = None


@dataclass
class Connack:
    session_present: bool = False
    return_code: int = CONNACK_ACCEPTED


@dataclass
class Publish:
    topic: str
    payload: bytes = b""
    qos: int = 0
    retain: bool = False
    dup: bool = False
    packet_id: int | None = None


@dataclass
class Puback:
    packet_id: int


@dataclass
class Subscribe:
    packet_id: int
    topics: list = field(default_factory=list)  # [(filter, qos)]


@dataclass
class Suback:
    packet_id: int
    return_codes: list = field(default_factory=list)


@dataclass
class Unsubscribe:
    packet_id: int
    topics: list = field(default_factory=list)


@dataclass
class Unsuback:
    packet_id: int


@dataclass
class Pingreq:
    pass


@dataclass
class Pingresp:
    pass


@dataclass
class Disconnect:
    pass


def _frame(ptype: int, flags: int, body: bytes) -> bytes:
    return bytes([(ptype << 4) | flags]) + encode_varint(len(body)) + body


def encode_packet(p) -> bytes:
    if isinstance(p, Connect):
        flags = 0
        if p.clean_session:
            flags |= 0x02
        payload = _enc_str(p.client_id)
        if p.will_topic is not None:
            if p.will_qos not in (0, 1):
                raise MqttProtocolError("will qos must be 0 or 1")
            flags |= 0x04 | (p.will_qos << 3)
            if p.will_retain:
                flags |= 0x20
            payload += _enc_str(p.will_topic) + _enc_bytes(p.will_payload)
        if p.username is not None:
            flags |= 0x80
            payload += _enc_str(p.username)
            if p.password is not None:
                flags |= 0x40
                payload += _enc_bytes(p.password)
        body = _enc_str("MQTT") + bytes([4, flags]) + struct.pack(">H", p.keep_alive) + payload
        return _frame(PacketType.CONNECT, 0, body)

    if isinstance(p, Connack):
        return _frame(PacketType.CONNACK, 0, bytes([1 if p.session_present else 0, p.return_code]))

    if isinstance(p, Publish):
        if p.qos not in (0, 1):
            raise MqttProtocolError("qos must be 0 or 1")
        flags = (0x08 if p.dup else 0) | (p.qos << 1) | (0x01 if p.retain else 0)
        body = _enc_str(p.topic)
        if p.qos > 0:
            if not p.packet_id:
                raise MqttProtocolError("qos > 0 publish requires a packet id")
            body += struct.pack(">H", p.packet_id)
        body += p.payload
        return _frame(PacketType.PUBLISH, flags, body)

    if isinstance(p, Puback):
        return _frame(PacketType.PUBACK, 0, struct.pack(">H", p.packet_id))

    if isinstance(p, Subscribe):
        if not p.topics:
            raise MqttProtocolError("subscribe requires at least one filter")
        body = struct.pack(">H", p.packet_id)
        for filt, qos in p.topics:
            if qos not in (0, 1):
                raise MqttProtocolError("subscription qos must be 0 or 1")
            body += _enc_str(filt) + bytes([qos])
        return _frame(PacketType.SUBSCRIBE, 0x02, body)

    if isinstance(p, Suback):
        body = struct.pack(">H", p.packet_id) + bytes(p.return_codes)
        return _frame(PacketType.SUBACK, 0, body)

    if isinstance(p, Unsubscribe):
        if not p.topics:
            raise MqttProtocolError("unsubscribe requires at least one filter")
        body = struct.pack(">H", p.packet_id) + b"".join(_enc_str(t) for t in p.topics)
        return _frame(PacketType.UNSUBSCRIBE, 0x02, body)

    if isinstance(p, Unsuback):
        return _frame(PacketType.UNSUBACK, 0, struct.pack(">H", p.packet_id))

    if isinstance(p, Pingreq):
        return _frame(PacketType.PINGREQ, 0, b"")
    if isinstance(p, Pingresp):
        return _frame(PacketType.PINGRESP, 0, b"")
    if isinstance(p, Disconnect):
        return _frame(PacketType.DISCONNECT, 0, b"")

    raise MqttProtocolError(f"cannot encode {type(p).__name__}")


def _decode_connect(flags, body: _Body) -> Connect:
    if flags != 0:
        raise MqttProtocolError("reserved CONNECT header flags must be 0")
    proto = body.string()
    if proto != "MQTT":
        raise MqttProtocolError(f"unsupported protocol name {proto!r}")
    level = body.u8()
    if level != 4:
        raise MqttProtocolError(f"unsupported protocol level {level}")
    cf = body.u8()
    if cf & 0x01:
        raise MqttProtocolError("reserved connect flag bit set")
    keep_alive = body.u16()
    client_id = body.string()
    p = Connect(client_id=client_id, keep_alive=keep_alive, clean_session=bool(cf & 0x02))
    if cf & 0x04:
        p.will_qos = (cf >> 3) & 0x03
        if p.will_qos > 1:
            raise MqttProtocolError("will qos 2 not supported")
        p.will_retain = bool(cf & 0x20)
        p.will_topic = body.string()
        p.will_payload = body.binary()
    elif cf & 0x38:
        raise MqttProtocolError("will flags set without will flag")
    if cf & 0x80:
        p.username = body.string()
    if cf & 0x40:
        if not cf & 0x80:
            raise MqttProtocolError("password flag without username flag")
        p.password = body.binary()
    body.expect_end()
    return p


def _decode_publish(flags, body: _Body) -> Publish:
    qos = (flags >> 1) & 0x03
    if qos > 1:
        raise MqttProtocolError(f"qos {qos} not supported")
    topic = body.string()
    if "+" in topic or "#" in topic:
        raise MqttProtocolError("wildcards are not allowed in a publish topic")
    packet_id = None
    if qos > 0:
        packet_id = body.u16()
        if packet_id == 0:
            raise MqttProtocolError("packet id 0 is not allowed")
    return Publish(
        topic=topic,
        payload=body.rest(),
        qos=qos,
        retain=bool(flags & 0x01),
        dup=bool(flags & 0x08),
        packet_id=packet_id,
    )


def decode_packet(buf: bytes):
    """Incremental decode: (packet, consumed) or (None, 0) for short input."""
    if len(buf) < 2:
        return None, 0
    first = buf[0]
    ptype = first >> 4
    flags = first & 0x0F
    vl = decode_varint(buf, 1)
    if vl is None:
        return None, 0
    remaining, vlen = vl
    total = 1 + vlen + remaining
    if len(buf) < total:
        return None, 0
    body = _Body(bytes(buf[1 + vlen : total]))

    if ptype == PacketType.CONNECT:
        return _decode_connect(flags, body), total
    if ptype == PacketType.CONNACK:
        if flags != 0 or remaining != 2:
            raise MqttProtocolError("malformed CONNACK")
        ack = body.u8()
        if ack > 1:
            raise MqttProtocolError("malformed CONNACK acknowledge flags")
        return Connack(session_present=bool(ack), return_code=body.u8()), total
    if ptype == PacketType.PUBLISH:
        return _decode_publish(flags, body), total
    if ptype == PacketType.PUBACK:
        if flags != 0 or remaining != 2:
            raise MqttProtocolError("malformed PUBACK")
        return Puback(packet_id=body.u16()), total
    if ptype == PacketType.SUBSCRIBE:
        if flags != 0x02:
            raise MqttProtocolError("SUBSCRIBE flags must be 0010")
        packet_id = body.u16()
        topics = []
        while body.pos < len(body.data):
            filt = body.string()
            qos = body.u8()
            if qos > 1:
                raise MqttProtocolError("subscription qos 2 not supported")
            topics.append((filt, qos))
        if not topics:
            raise MqttProtocolError("SUBSCRIBE without filters")
        return Subscribe(packet_id=packet_id, topics=topics), total
    if ptype == PacketType.SUBACK:
        packet_id = body.u16()
        codes = list(body.rest())
        return Suback(packet_id=packet_id, return_codes=codes), total
    if ptype == PacketType.UNSUBSCRIBE:
        if flags != 0x02:
            raise MqttProtocolError("UNSUBSCRIBE flags must be 0010")
        packet_id = body.u16()
        topics = []
        while body.pos < len(body.data):
            topics.append(body.string())
        if not topics:
            raise MqttProtocolError("UNSUBSCRIBE without filters")
        return Unsubscribe(packet_id=packet_id, topics=topics), total
    if ptype == PacketType.UNSUBACK:
        if flags != 0 or remaining != 2:
            raise MqttProtocolError("malformed UNSUBACK")
        return Unsuback(packet_id=body.u16()), total
    if ptype == PacketType.PINGREQ:
        if flags != 0 or remaining != 0:
            raise MqttProtocolError("malformed PINGREQ")
        return Pingreq(), total
    if ptype == PacketType.PINGRESP:
        if flags != 0 or remaining != 0:
            raise MqttProtocolError("malformed PINGRESP")
        return Pingresp(), total
    if ptype == PacketType.DISCONNECT:
        if flags != 0 or remaining != 0:
            raise MqttProtocolError("malformed DISCONNECT")
        return Disconnect(), total
    raise MqttProtocolError(f"unknown or unsupported packet type {ptype}")
