// Typed client for the edge server's HTTP API and SSE stream.
// Every dashboard action maps to exactly one of these calls; there is no
// hidden channel.

export interface NodeInfo {
  node_id: string;
  online: boolean;
  last_seen_ts: number | null;
}

export interface TelemetryPayload {
  ts: number;
  node: string;
  soil_adc: number;
  soil_n: number;
  dryness_pct: number;
  temp_c: number;
  hum_pct: number;
  light_lux: number;
  ph: number | null;
}

export interface EventPayload {
  ts: number;
  node: string;
  predicted_ml: number;
  dispensed_ml: number;
  duration_ms: number;
  trigger: "model" | "rule" | "manual";
  skipped_reason?: string;
}

export interface StoreRecord {
  kind: "telemetry" | "event" | "status";
  node: string;
  ts: number;
  recv_ts: number;
  payload: Record<string, unknown>;
  duplicate?: boolean;
}

export interface HistoryBucket {
  ts: number;
  count: number;
  [field: string]: number;
}

export interface NodeConfigDoc {
  sample_period_ms?: number;
  window_len?: number;
  ema_alpha?: number;
  min_ml?: number;
  max_ml?: number;
  cooldown_s?: number;
  pump_ms_per_ml?: number;
  mode?: "model" | "rule";
}

export interface CmdDoc {
  type: "irrigate_now" | "pause" | "resume";
  ml?: number;
}

export interface ApiError {
  code: number;
  message: string;
}

// the canonical export header the server emits (and tests pin)
export const EXPORT_CSV_HEADER = "soil_adc,light,temperature,humidity,water_ml";

export class ApiRequestError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.base + path, init);
    const body = await resp.json().catch(() => null);
    if (!resp.ok) {
      const message = (body as ApiError | null)?.message ?? `HTTP ${resp.status}`;
      throw new ApiRequestError(resp.status, message);
    }
    return body as T;
  }

  nodes(): Promise<NodeInfo[]> {
    return this.request("/api/nodes");
  }

  latest(node: string): Promise<StoreRecord> {
    return this.request(`/api/nodes/${node}/latest`);
  }

  history(node: string, fromTs: number, toTs: number, buckets: number):
      Promise<{ node_id: string; buckets: HistoryBucket[] }> {
    return this.request(
      `/api/nodes/${node}/history?from=${fromTs}&to=${toTs}&buckets=${buckets}`,
    );
  }

  events(node: string, limit = 100): Promise<{ node_id: string; records: StoreRecord[] }> {
    return this.request(`/api/nodes/${node}/events?limit=${limit}`);
  }

  getConfig(node: string): Promise<NodeConfigDoc> {
    return this.request(`/api/nodes/${node}/config`);
  }

  putConfig(node: string, doc: NodeConfigDoc): Promise<{ status: string; config: NodeConfigDoc }> {
    return this.request(`/api/nodes/${node}/config`, {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(doc),
    });
  }

  sendCmd(node: string, cmd: CmdDoc): Promise<{ status: string; cmd: CmdDoc }> {
    return this.request(`/api/nodes/${node}/cmd`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(cmd),
    });
  }

  health(): Promise<{ status: string; ingestion_paused: boolean }> {
    return this.request("/api/health");
  }

  exportCsvUrl(node: string, fromTs?: number, toTs?: number): string {
    const params = new URLSearchParams();
    if (fromTs !== undefined) params.set("from", String(fromTs));
    if (toTs !== undefined) params.set("to", String(toTs));
    const qs = params.toString();
    return `${this.base}/api/nodes/${node}/export.csv${qs ? "?" + qs : ""}`;
  }

  streamUrl(): string {
    return `${this.base}/api/stream`;
  }
}

// -- live stream -----------------------------------------------------------

export type StreamState = "connecting" | "live" | "offline";

interface EventSourceLike {
  onmessage: ((ev: { data: string }) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  onopen: ((ev: unknown) => void) | null;
  close(): void;
}

type EventSourceFactory = (url: string) => EventSourceLike;

const defaultFactory: EventSourceFactory = (url) =>
  new EventSource(url) as unknown as EventSourceLike;

/** One SSE connection for the whole page; the browser's EventSource handles
 * reconnection using the server's declared retry interval, so the app never
 * polls while the stream is healthy. */
export class LiveStream {
  private es: EventSourceLike | null = null;
  state: StreamState = "connecting";

  constructor(
    private url: string,
    private onRecord: (record: StoreRecord) => void,
    private onState: (state: StreamState) => void = () => {},
    private factory: EventSourceFactory = defaultFactory,
  ) {}

  start(): void {
    this.state = "connecting";
    this.onState(this.state);
    this.es = this.factory(this.url);
    this.es.onopen = () => this.setState("live");
    this.es.onmessage = (ev) => {
      this.setState("live");
      try {
        this.onRecord(JSON.parse(ev.data) as StoreRecord);
      } catch {
        // a malformed frame never takes the stream down
      }
    };
    this.es.onerror = () => this.setState("offline");
  }

  stop(): void {
    this.es?.close();
    this.es = null;
  }

  private setState(next: StreamState): void {
    if (this.state !== next) {
      this.state = next;
      this.onState(next);
    }
  }
}
