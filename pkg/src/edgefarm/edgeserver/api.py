"""The local HTTP API and live event stream the dashboard consumes.

JSON errors take the shape {"code": int, "message": str}. Reads always
serve; writes (cmd relay, config updates) return 503 while ingestion is
paused. The live feed is server-sent events with a per-client buffer of
1000 records; a client that falls further behind is disconnected and
reconnects via the declared retry interval.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from ..mqttplane import topics as mqtt_topics
from ..mqttplane.topics import PayloadError
from .ingest import IngestService
from .store import QUERY_LIMIT_CAP, Store, StoreError

__all__ = ["StreamHub", "make_app", "serve_in_thread"]

SSE_RETRY_MS = 3000
SSE_BUFFER = 1000
_KILL = object()


class StreamHub:
    """Fan-out of live records to SSE subscribers, lossless up to each
    client's buffer; a full buffer kills that client."""

    def __init__(self, buffer: int = SSE_BUFFER):
        self.buffer = buffer
        self._lock = threading.Lock()
        self._clients: set[queue.Queue] = set()

    def publish(self, record: dict) -> None:
        with self._lock:
            clients = list(self._clients)
        for q in clients:
            try:
                q.put_nowait(record)
            except queue.Full:
                try:
                    q.get_nowait()  # make room for the kill marker
                except queue.Empty:
                    pass
                q.put_nowait(_KILL)
                self.unsubscribe(q)

    def subscribe(self) -> queue.Queue:
        q = queue.Queue(maxsize=self.buffer)
        with self._lock:
            self._clients.add(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            self._clients.discard(q)


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": status, "message": message})


class _TokenAuth:
    """Pure-ASGI token check; BaseHTTPMiddleware would buffer the SSE stream."""

    def __init__(self, app, token: str):
        self.app = app
        self.token = token.encode()

    async def __call__(self, scope, receive, send):
        if scope["type"] == "http" and scope["path"].startswith("/api"):
            headers = dict(scope.get("headers") or [])
            if headers.get(b"x-auth-token") != self.token:
                response = _error(401, "missing or invalid auth token")
                await response(scope, receive, send)
                return
        await self.app(scope, receive, send)


def make_app(store: Store, ingest: IngestService, hub: StreamHub | None = None,
             static_dir=None, auth_token: str | None = None) -> FastAPI:
    hub = hub or StreamHub()
    if ingest.on_record is None:
        ingest.on_record = hub.publish
    app = FastAPI(title="edgefarm server", docs_url=None, redoc_url=None)
    started = time.monotonic()

    if auth_token is not None:
        app.add_middleware(_TokenAuth, token=auth_token)

    @app.exception_handler(404)
    async def not_found(request, exc):
        return _error(404, "unknown endpoint or resource")

    def write_guard():
        if ingest.paused:
            return _error(503, f"ingestion paused: {ingest.pause_reason}")
        return None

    # -- nodes and data ----------------------------------------------------

    @app.get("/api/nodes")
    def nodes():
        out = []
        names = set(store.nodes()) | set(ingest.config_cache)
        for node in sorted(names):
            status = store.latest(node, kind="status")
            latest = store.latest(node, kind="telemetry")
            out.append(
                {
                    "node_id": node,
                    "online": bool(status and status["payload"].get("online")),
                    "last_seen_ts": latest["ts"] if latest else None,
                }
            )
        return out

    @app.get("/api/nodes/{node_id}/latest")
    def latest(node_id: str):
        rec = store.latest(node_id, kind="telemetry")
        if rec is None:
            return _error(404, f"no telemetry for node {node_id!r}")
        return rec

    @app.get("/api/nodes/{node_id}/history")
    def history(node_id: str, request: Request):
        q = request.query_params
        try:
            from_ts = int(q.get("from", 0))
            to_ts = int(q["to"]) if "to" in q else None
            limit = int(q.get("limit", QUERY_LIMIT_CAP))
            buckets = int(q["buckets"]) if "buckets" in q else None
        except ValueError:
            return _error(400, "from/to/limit/buckets must be integers")
        try:
            records = store.query(node_id, from_ts, to_ts, kinds=("telemetry",), limit=limit)
            if buckets is not None:
                return {"node_id": node_id, "buckets": store.downsample(
                    records, buckets, from_ts or None, to_ts)}
        except StoreError as e:
            return _error(400, str(e))
        return {"node_id": node_id, "records": records}

    @app.get("/api/nodes/{node_id}/events")
    def events(node_id: str, request: Request):
        q = request.query_params
        try:
            from_ts = int(q.get("from", 0))
            to_ts = int(q["to"]) if "to" in q else None
            limit = int(q.get("limit", QUERY_LIMIT_CAP))
        except ValueError:
            return _error(400, "from/to/limit must be integers")
        try:
            records = store.query(node_id, from_ts, to_ts, kinds=("event",), limit=limit)
        except StoreError as e:
            return _error(400, str(e))
        return {"node_id": node_id, "records": records}

    # -- control plane -------------------------------------------------------

    @app.post("/api/nodes/{node_id}/cmd")
    async def cmd(node_id: str, request: Request):
        guard = write_guard()
        if guard:
            return guard
        try:
            mqtt_topics.validate_node_id(node_id)
            body = await request.body()
            doc = mqtt_topics.validate_cmd(body)
        except PayloadError as e:
            return _error(400, str(e))
        ingest.client.publish(
            mqtt_topics.cmd_topic(node_id),
            json.dumps(doc, separators=(",", ":")).encode(),
            qos=1,
        )
        return JSONResponse(status_code=202, content={"status": "accepted", "cmd": doc})

    @app.get("/api/nodes/{node_id}/config")
    def get_config(node_id: str):
        cfg = ingest.config_cache.get(node_id)
        if cfg is None:
            return _error(404, f"no retained config for node {node_id!r}")
        return cfg

    @app.put("/api/nodes/{node_id}/config")
    async def put_config(node_id: str, request: Request):
        guard = write_guard()
        if guard:
            return guard
        try:
            mqtt_topics.validate_node_id(node_id)
            body = await request.body()
            doc = mqtt_topics.validate_config_update(body)
        except PayloadError as e:
            return _error(400, str(e))
        ingest.client.publish(
            mqtt_topics.config_topic(node_id),
            json.dumps(doc, separators=(",", ":")).encode(),
            qos=1,
            retain=True,
        )
        ingest.config_cache[node_id] = doc  # read-your-writes
        return {"status": "stored", "config": doc}

    # -- export and live feed -------------------------------------------------

    @app.get("/api/nodes/{node_id}/export.csv")
    def export_csv(node_id: str, request: Request):
        q = request.query_params
        try:
            from_ts = int(q.get("from", 0))
            to_ts = int(q["to"]) if "to" in q else None
            window_ms = int(q.get("window_ms", 28_000))
        except ValueError:
            return _error(400, "from/to/window_ms must be integers")
        try:
            telemetry = store.query(node_id, from_ts, to_ts, kinds=("telemetry",))
            events = store.query(node_id, from_ts, to_ts, kinds=("event",))
        except StoreError as e:
            return _error(400, str(e))
        # join each irrigation event onto its nearest telemetry row within
        # one decision window; all other rows export water_ml = 0
        water = {}
        for ev in events:
            if ev.get("duplicate") or ev["payload"].get("dispensed_ml", 0) <= 0:
                continue
            best = None
            for i, rec in enumerate(telemetry):
                d = abs(rec["ts"] - ev["ts"])
                if d <= window_ms and (best is None or d < best[0]):
                    best = (d, i)
            if best is not None:
                water[best[1]] = water.get(best[1], 0.0) + ev["payload"]["dispensed_ml"]
        lines = ["soil_adc,light,temperature,humidity,water_ml"]
        for i, rec in enumerate(telemetry):
            p = rec["payload"]
            lines.append(
                f"{p.get('soil_adc', '')},{p.get('light_lux', '')},"
                f"{p.get('temp_c', '')},{p.get('hum_pct', '')},{water.get(i, 0.0)}"
            )
        return PlainTextResponse(
            "\n".join(lines) + "\n",
            media_type="text/csv",
            headers={"content-disposition": f"attachment; filename={node_id}.csv"},
        )

    @app.get("/api/stream")
    def stream():
        q = hub.subscribe()

        def gen():
            yield f"retry: {SSE_RETRY_MS}\n\n"
            try:
                while True:
                    try:
                        item = q.get(timeout=15.0)
                    except queue.Empty:
                        yield ": keepalive\n\n"
                        continue
                    if item is _KILL:
                        return
                    yield f"data: {json.dumps(item, separators=(',', ':'))}\n\n"
            finally:
                hub.unsubscribe(q)

        return StreamingResponse(gen(), media_type="text/event-stream")

    @app.get("/api/health")
    def health():
        return {
            "status": "degraded" if ingest.paused else "ok",
            "ingestion_paused": ingest.paused,
            "pause_reason": ingest.pause_reason,
            "records_written": store.records_written,
            "dead_letters": store.dead_letters,
            "uptime_s": round(time.monotonic() - started, 1),
        }

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="dashboard")

    return app


def serve_in_thread(app: FastAPI, host: str = "127.0.0.1", port: int = 8080):
    """Run uvicorn on a daemon thread; returns (server, thread, bound_port).
    port=0 binds an ephemeral port."""
    import uvicorn

    config = uvicorn.Config(app, host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started and time.monotonic() < deadline:
        time.sleep(0.02)
    if not server.started:
        raise RuntimeError("uvicorn failed to start")
    bound_port = server.servers[0].sockets[0].getsockname()[1]
    return server, thread, bound_port
