"""MQTT-to-store ingestion: subscribe to every node topic, persist each
message with a server receive timestamp, quarantine anything malformed."""

from __future__ import annotations

import json
import logging
import time

from ..mqttplane import topics as mqtt_topics
from ..mqttplane.client import Client
from .store import Store

log = logging.getLogger(__name__)

__all__ = ["IngestService"]

SUBSCRIPTIONS = (
    ("farm/+/telemetry", 0),
    ("farm/+/event/#", 1),
    ("farm/+/status", 1),
    ("farm/+/config", 1),
)


class IngestService:
    """Bridges the MQTT client to the store and the live-stream hub.

    Retained node configs are cached in memory (the broker is their source
    of truth); telemetry/events/status become store records. A full disk
    pauses ingestion and raises the health flag instead of crashing.
    """

    def __init__(self, client: Client, store: Store, on_record=None):
        self.client = client
        self.store = store
        self.on_record = on_record
        self.config_cache: dict[str, dict] = {}
        self.paused = False
        self.pause_reason: str | None = None
        self.started_at = time.monotonic()
        client.on_message = self._on_message
        for filt, qos in SUBSCRIPTIONS:
            client.subscribe(filt, qos=qos)

    def start(self) -> "IngestService":
        self.client.start()
        return self

    def stop(self) -> None:
        self.client.stop()

    def resume(self) -> None:
        self.paused = False
        self.pause_reason = None

    def _on_message(self, topic: str, payload: bytes, qos: int, retain: bool, dup: bool) -> None:
        parsed = mqtt_topics.parse_farm_topic(topic)
        if parsed is None:
            return
        node, kind = parsed
        if kind == "cmd":
            return  # operator commands are not storage records
        try:
            doc = json.loads(payload.decode("utf-8"))
            if not isinstance(doc, dict):
                raise ValueError("payload must be a JSON object")
        except (ValueError, UnicodeDecodeError) as e:
            self.store.dead_letter(payload, f"{topic}: {e}")
            return
        if kind == "config":
            if payload:
                self.config_cache[node] = doc
            else:
                self.config_cache.pop(node, None)
            return
        if self.paused:
            return
        recv_ts = int(time.time() * 1000)
        ts = int(doc.get("ts", recv_ts))
        try:
            record = self.store.append(kind, node, ts, doc, recv_ts_ms=recv_ts)
        except OSError as e:
            self.paused = True
            self.pause_reason = f"store append failed: {e}"
            log.error("ingestion paused: %s", self.pause_reason)
            return
        if self.on_record is not None:
            self.on_record(record)
