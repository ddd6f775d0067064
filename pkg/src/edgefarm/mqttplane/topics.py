"""Topic schema, wildcard matching, and JSON payload contracts.

One farm node owns five topics under farm/{node_id}/: telemetry (QoS 0),
event/irrigation (QoS 1), cmd (QoS 1), config (QoS 1, retained) and
status (retained; the node's last-will sets it offline).
"""

from __future__ import annotations

import json
import re

__all__ = [
    "PayloadError",
    "NODE_ID_RE",
    "validate_node_id",
    "validate_topic",
    "validate_filter",
    "topic_matches",
    "telemetry_topic",
    "event_topic",
    "cmd_topic",
    "config_topic",
    "status_topic",
    "parse_farm_topic",
    "validate_cmd",
    "validate_config_update",
    "TELEMETRY_QOS",
    "EVENT_QOS",
    "CMD_QOS",
    "CONFIG_QOS",
]

NODE_ID_RE = re.compile(r"^[a-z0-9_-]{1,32}$")

TELEMETRY_QOS = 0
EVENT_QOS = 1
CMD_QOS = 1
CONFIG_QOS = 1

CMD_TYPES = ("irrigate_now", "pause", "resume")
EVENT_TRIGGERS = ("model", "rule", "manual")


class PayloadError(ValueError):
    pass


def validate_node_id(node_id: str) -> str:
    if not NODE_ID_RE.match(node_id or ""):
        raise PayloadError(f"invalid node id {node_id!r} (want [a-z0-9_-]{{1,32}})")
    return node_id


def telemetry_topic(node_id: str) -> str:
    return f"farm/{validate_node_id(node_id)}/telemetry"


def event_topic(node_id: str) -> str:
    return f"farm/{validate_node_id(node_id)}/event/irrigation"


def cmd_topic(node_id: str) -> str:
    return f"farm/{validate_node_id(node_id)}/cmd"


def config_topic(node_id: str) -> str:
    return f"farm/{validate_node_id(node_id)}/config"


def status_topic(node_id: str) -> str:
    return f"farm/{validate_node_id(node_id)}/status"


def parse_farm_topic(topic: str):
    """('n1', 'telemetry' | 'event' | 'cmd' | 'config' | 'status') or None."""
    parts = topic.split("/")
    if len(parts) < 3 or parts[0] != "farm":
        return None
    node, kind = parts[1], parts[2]
    if not NODE_ID_RE.match(node):
        return None
    if kind == "event" and len(parts) >= 3:
        return node, "event"
    if kind in ("telemetry", "cmd", "config", "status") and len(parts) == 3:
        return node, kind
    return None


def validate_topic(topic: str) -> None:
    """A publishable topic: nonempty, no wildcards, no NUL."""
    if not topic:
        raise PayloadError("empty topic")
    if len(topic.encode("utf-8")) > 0xFFFF:
        raise PayloadError("topic too long")
    if "+" in topic or "#" in topic:
        raise PayloadError("wildcards are not allowed in a topic")
    if "\x00" in topic:
        raise PayloadError("NUL byte in topic")


def validate_filter(filt: str) -> None:
    """A subscription filter: '+' only as a whole level, '#' only last."""
    if not filt:
        raise PayloadError("empty filter")
    if "\x00" in filt:
        raise PayloadError("NUL byte in filter")
    levels = filt.split("/")
    for i, level in enumerate(levels):
        if "+" in level and level != "+":
            raise PayloadError(f"'+' must occupy a whole level in {filt!r}")
        if "#" in level:
            if level != "#":
                raise PayloadError(f"'#' must occupy a whole level in {filt!r}")
            if i != len(levels) - 1:
                raise PayloadError(f"'#' must be the last level in {filt!r}")


def topic_matches(filt: str, topic: str) -> bool:
    """Standard single-level (+) and multi-level (#) wildcard semantics;
    '#' also matches its parent level."""
    validate_filter(filt)
    f = filt.split("/")
    t = topic.split("/")
    fi = 0
    for fi, fl in enumerate(f):
        if fl == "#":
            return True
        if fi >= len(t):
            return False
        if fl != "+" and fl != t[fi]:
            return False
    return len(f) == len(t)


def validate_cmd(payload: bytes) -> dict:
    """cmd payload: {"type": irrigate_now|pause|resume, "ml"?: > 0}."""
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise PayloadError(f"cmd payload is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise PayloadError("cmd payload must be a JSON object")
    cmd_type = doc.get("type")
    if cmd_type not in CMD_TYPES:
        raise PayloadError(f"unknown cmd type {cmd_type!r}")
    if "ml" in doc and doc["ml"] is not None:
        ml = doc["ml"]
        if not isinstance(ml, (int, float)) or isinstance(ml, bool) or not ml > 0:
            raise PayloadError("cmd ml must be a positive number")
    return doc


_CONFIG_NUMERIC_FIELDS = {
    "sample_period_ms": (1, None),
    "window_len": (1, None),
    "ema_alpha": (0, 1),
    "min_ml": (0, None),
    "max_ml": (0, None),
    "cooldown_s": (0, None),
    "pump_ms_per_ml": (1e-9, None),
}


def validate_config_update(payload: bytes) -> dict:
    """Retained config payload: any subset of the node config fields,
    range-checked. Raises PayloadError on violations."""
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise PayloadError(f"config payload is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise PayloadError("config payload must be a JSON object")
    for key, (lo, hi) in _CONFIG_NUMERIC_FIELDS.items():
        if key not in doc:
            continue
        v = doc[key]
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise PayloadError(f"config {key} must be numeric")
        if lo is not None and v < lo:
            raise PayloadError(f"config {key} below minimum {lo}")
        if hi is not None and v > hi:
            raise PayloadError(f"config {key} above maximum {hi}")
    if "mode" in doc and doc["mode"] not in ("model", "rule"):
        raise PayloadError(f"config mode must be 'model' or 'rule', got {doc.get('mode')!r}")
    if "min_ml" in doc and "max_ml" in doc and not doc["min_ml"] < doc["max_ml"]:
        raise PayloadError("config requires min_ml < max_ml")
    return doc
