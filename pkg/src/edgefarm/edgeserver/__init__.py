"""Raspberry-Pi-role service: MQTT ingestion, append-only local storage,
and the HTTP API + live stream behind the dashboard."""

from .api import StreamHub, make_app, serve_in_thread
from .ingest import IngestService
from .store import Store, StoreError
