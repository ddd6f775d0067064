import { describe, expect, it, vi } from "vitest";

import {
  ApiClient,
  ApiRequestError,
  EXPORT_CSV_HEADER,
  LiveStream,
  type StoreRecord,
} from "../src/api.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

function clientWithSpy(body: unknown = {}, status = 200) {
  const calls: { url: string; init?: RequestInit }[] = [];
  const fetchFn = vi.fn(async (url: string, init?: RequestInit) => {
    calls.push({ url, init });
    return jsonResponse(body, status);
  });
  return { api: new ApiClient("", fetchFn), calls };
}

describe("ApiClient endpoint mapping", () => {
  it("each action issues exactly one documented call", async () => {
    const { api, calls } = clientWithSpy([]);
    await api.nodes();
    expect(calls).toHaveLength(1);
    expect(calls[0].url).toBe("/api/nodes");

    const { api: api2, calls: calls2 } = clientWithSpy({ records: [] });
    await api2.latest("n1");
    await api2.history("n1", 0, 1000, 10);
    await api2.events("n1", 50);
    expect(calls2.map((c) => c.url)).toEqual([
      "/api/nodes/n1/latest",
      "/api/nodes/n1/history?from=0&to=1000&buckets=10",
      "/api/nodes/n1/events?limit=50",
    ]);
  });

  it("sendCmd posts the validated body to the cmd endpoint", async () => {
    const { api, calls } = clientWithSpy({ status: "accepted" }, 202);
    await api.sendCmd("n1", { type: "irrigate_now", ml: 5 });
    expect(calls[0].url).toBe("/api/nodes/n1/cmd");
    expect(calls[0].init?.method).toBe("POST");
    expect(JSON.parse(calls[0].init?.body as string)).toEqual({
      type: "irrigate_now",
      ml: 5,
    });
  });

  it("putConfig round-trips through the config endpoint", async () => {
    const { api, calls } = clientWithSpy({ status: "stored", config: { cooldown_s: 300 } });
    const saved = await api.putConfig("n1", { cooldown_s: 300 });
    expect(calls[0].url).toBe("/api/nodes/n1/config");
    expect(calls[0].init?.method).toBe("PUT");
    expect(saved.config).toEqual({ cooldown_s: 300 });
  });

  it("surfaces server error shapes as typed errors", async () => {
    const { api } = clientWithSpy({ code: 400, message: "cmd ml must be a positive number" }, 400);
    await expect(api.sendCmd("n1", { type: "irrigate_now", ml: 5 })).rejects.toThrow(
      ApiRequestError,
    );
    await expect(
      api.sendCmd("n1", { type: "irrigate_now", ml: 5 }),
    ).rejects.toMatchObject({ status: 400, message: "cmd ml must be a positive number" });
  });

  it("503 from a paused server is reported with its message", async () => {
    const { api } = clientWithSpy({ code: 503, message: "ingestion paused: disk full" }, 503);
    await expect(api.health()).rejects.toMatchObject({ status: 503 });
  });

  it("export url targets the canonical CSV endpoint", () => {
    const api = new ApiClient("");
    expect(api.exportCsvUrl("n1")).toBe("/api/nodes/n1/export.csv");
    expect(api.exportCsvUrl("n1", 100, 200)).toBe("/api/nodes/n1/export.csv?from=100&to=200");
  });

  it("pins the canonical export header", () => {
    expect(EXPORT_CSV_HEADER).toBe("soil_adc,light,temperature,humidity,water_ml");
  });
});

// -- live stream ----------------------------------------------------------------

class FakeEventSource {
  onmessage: ((ev: { data: string }) => void) | null = null;
  onerror: ((ev: unknown) => void) | null = null;
  onopen: ((ev: unknown) => void) | null = null;
  closed = false;

  close(): void {
    this.closed = true;
  }

  emit(record: unknown): void {
    this.onmessage?.({ data: JSON.stringify(record) });
  }
}

describe("LiveStream", () => {
  it("delivers records and tracks connection state", () => {
    const es = new FakeEventSource();
    const records: StoreRecord[] = [];
    const states: string[] = [];
    const stream = new LiveStream(
      "/api/stream",
      (r) => records.push(r),
      (s) => states.push(s),
      () => es,
    );
    stream.start();
    es.onopen?.({});
    es.emit({ kind: "telemetry", node: "n1", ts: 1, recv_ts: 1, payload: {} });
    expect(records).toHaveLength(1);
    expect(states).toEqual(["connecting", "live"]);
    es.onerror?.({});
    expect(states).toEqual(["connecting", "live", "offline"]);
    // recovery: the browser's EventSource reconnects on its own
    es.emit({ kind: "telemetry", node: "n1", ts: 2, recv_ts: 2, payload: {} });
    expect(stream.state).toBe("live");
    expect(records).toHaveLength(2);
  });

  it("a malformed frame is dropped without killing the stream", () => {
    const es = new FakeEventSource();
    const records: StoreRecord[] = [];
    const stream = new LiveStream("/api/stream", (r) => records.push(r), () => {}, () => es);
    stream.start();
    es.onmessage?.({ data: "{nope" });
    es.emit({ kind: "event", node: "n1", ts: 3, recv_ts: 3, payload: {} });
    expect(records).toHaveLength(1);
  });

  it("stop closes the underlying source", () => {
    const es = new FakeEventSource();
    const stream = new LiveStream("/api/stream", () => {}, () => {}, () => es);
    stream.start();
    stream.stop();
    expect(es.closed).toBe(true);
  });
});
