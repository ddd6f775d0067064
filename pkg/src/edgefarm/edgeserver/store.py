"""Append-only local document store: newline-delimited JSON partitions.

One file per (node, UTC day) under data/{node}/{YYYY-MM-DD}.ndjson keeps
the store greppable and crash-tolerant: a crash mid-append can only
corrupt the final line, which the loader skips with a warning. A small
in-memory index per partition (min/max timestamp, offset checkpoints)
narrows range scans.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

log = logging.getLogger(__name__)

__all__ = ["Store", "StoreError"]

KINDS = ("telemetry", "event", "status")
QUERY_LIMIT_CAP = 10_000
CHECKPOINT_EVERY = 256


class StoreError(Exception):
    pass


def _day_of(ts_ms: int) -> str:
    return datetime.fromtimestamp(ts_ms / 1000.0, tz=timezone.utc).strftime("%Y-%m-%d")


@dataclass
class _PartitionIndex:
    size: int = 0  # file size the index was built at
    min_ts: int | None = None
    max_ts: int | None = None
    checkpoints: list = field(default_factory=list)  # (record_index, ts) every N records
    records: list = field(default_factory=list)  # parsed records, cached


class Store:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._index: dict[Path, _PartitionIndex] = {}
        self.records_written = 0
        self.dead_letters = 0
        self.recovered_partials = 0

    # -- writing ------------------------------------------------------------

    def _partition_path(self, node: str, ts_ms: int) -> Path:
        return self.root / node / f"{_day_of(ts_ms)}.ndjson"

    def append(self, kind: str, node: str, ts_ms: int, payload: dict,
               recv_ts_ms: int | None = None) -> dict:
        if kind not in KINDS:
            raise StoreError(f"unknown record kind {kind!r}")
        record = {
            "kind": kind,
            "node": node,
            "ts": int(ts_ms),
            "recv_ts": int(recv_ts_ms if recv_ts_ms is not None else ts_ms),
            "payload": payload,
        }
        line = json.dumps(record, separators=(",", ":")) + "\n"
        path = self._partition_path(node, ts_ms)
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "a", encoding="utf-8") as f:
                f.write(line)
            self._index.pop(path, None)  # appended: rebuild lazily
            self.records_written += 1
        return record

    def dead_letter(self, raw: bytes, reason: str) -> None:
        """Quarantine malformed input; never dropped silently."""
        entry = {
            "reason": reason,
            "raw": raw.decode("utf-8", errors="replace"),
            "recv_ts": int(datetime.now(tz=timezone.utc).timestamp() * 1000),
        }
        path = self.root / "_deadletter.ndjson"
        with self._lock:
            with open(path, "a", encoding="utf-8") as f:
                f.write(json.dumps(entry, separators=(",", ":")) + "\n")
            self.dead_letters += 1

    # -- reading -------------------------------------------------------------

    def nodes(self) -> list[str]:
        return sorted(
            p.name for p in self.root.iterdir()
            if p.is_dir() and not p.name.startswith("_")
        ) if self.root.exists() else []

    def _partitions(self, node: str) -> list[Path]:
        d = self.root / node
        if not d.is_dir():
            return []
        return sorted(d.glob("*.ndjson"))

    def _read_partition(self, path: Path) -> list[dict]:
        """All complete records in a partition; a trailing partial line is
        skipped with a warning (crash recovery)."""
        records = []
        try:
            with open(path, "r", encoding="utf-8") as f:
                lines = f.read().split("\n")
        except OSError as e:
            raise StoreError(f"cannot read partition {path}: {e}") from None
        # a complete file ends with "\n", so the final split element is ""
        trailing_partial = lines and lines[-1] != ""
        body = lines[:-1]
        for i, line in enumerate(body):
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                log.warning("skipping corrupt record in %s line %d", path, i + 1)
                self.recovered_partials += 1
        if trailing_partial:
            try:
                records.append(json.loads(lines[-1]))
            except json.JSONDecodeError:
                log.warning("skipping partial final line in %s (crash recovery)", path)
                self.recovered_partials += 1
        return records

    def _ensure_index(self, path: Path) -> _PartitionIndex:
        size = path.stat().st_size
        idx = self._index.get(path)
        if idx is not None and idx.size == size:
            return idx
        records = self._read_partition(path)
        idx = _PartitionIndex(size=size, records=records)
        if records:
            idx.min_ts = min(r["ts"] for r in records)
            idx.max_ts = max(r["ts"] for r in records)
            idx.checkpoints = [
                (i, records[i]["ts"]) for i in range(0, len(records), CHECKPOINT_EVERY)
            ]
        self._index[path] = idx
        return idx

    def query(self, node: str, from_ts: int = 0, to_ts: int | None = None,
              kinds=("telemetry",), limit: int = QUERY_LIMIT_CAP) -> list[dict]:
        """Time-ordered records for one node; unknown nodes yield []."""
        if to_ts is None:
            to_ts = 2**62
        if from_ts > to_ts:
            raise StoreError(f"inverted range: from {from_ts} > to {to_ts}")
        limit = min(int(limit), QUERY_LIMIT_CAP)
        out: list[dict] = []
        with self._lock:
            for path in self._partitions(node):
                idx = self._ensure_index(path)
                if idx.min_ts is None or idx.max_ts < from_ts or idx.min_ts > to_ts:
                    continue
                for rec in idx.records:
                    if rec["kind"] in kinds and from_ts <= rec["ts"] <= to_ts:
                        out.append(rec)
        out.sort(key=lambda r: (r["ts"], r["recv_ts"]))
        if "event" in kinds:
            self._flag_duplicates(out)
        return out[:limit]

    @staticmethod
    def _flag_duplicates(records: list[dict]) -> None:
        """At-least-once delivery can duplicate events; keep them but flag
        repeats by their (node, ts, predicted_ml) identity."""
        seen = set()
        for rec in records:
            if rec["kind"] != "event":
                continue
            key = (rec["node"], rec["ts"], rec["payload"].get("predicted_ml"))
            if key in seen:
                rec["duplicate"] = True
            else:
                seen.add(key)

    def latest(self, node: str, kind: str = "telemetry") -> dict | None:
        with self._lock:
            for path in reversed(self._partitions(node)):
                records = [r for r in self._ensure_index(path).records if r["kind"] == kind]
                if records:
                    return max(records, key=lambda r: (r["ts"], r["recv_ts"]))
        return None

    def downsample(self, records: list[dict], buckets: int,
                   from_ts: int | None = None, to_ts: int | None = None) -> list[dict]:
        """Mean-per-bucket reduction of numeric payload fields, for charts."""
        if buckets < 1:
            raise StoreError("buckets must be >= 1")
        if not records:
            return []
        lo = from_ts if from_ts is not None else records[0]["ts"]
        hi = to_ts if to_ts is not None else records[-1]["ts"]
        span = max(hi - lo, 1)
        width = span / buckets
        groups: dict[int, list[dict]] = {}
        for rec in records:
            b = min(int((rec["ts"] - lo) / width), buckets - 1)
            groups.setdefault(b, []).append(rec)
        out = []
        for b in sorted(groups):
            rows = groups[b]
            sums: dict[str, float] = {}
            counts: dict[str, int] = {}
            for rec in rows:
                for k, v in rec["payload"].items():
                    if isinstance(v, (int, float)) and not isinstance(v, bool):
                        sums[k] = sums.get(k, 0.0) + v
                        counts[k] = counts.get(k, 0) + 1
            out.append(
                {
                    "ts": int(lo + (b + 0.5) * width),
                    "count": len(rows),
                    **{k: sums[k] / counts[k] for k in sums},
                }
            )
        return out
