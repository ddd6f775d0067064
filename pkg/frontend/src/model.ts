// Dashboard view-model: pure state transitions, no DOM.
// Everything here derives from the HTTP API and the SSE stream.

import type {
  EventPayload,
  NodeConfigDoc,
  NodeInfo,
  StoreRecord,
  StreamState,
  TelemetryPayload,
} from "./api.js";

export type GaugeZone = "in-water" | "wet" | "moderate" | "dry" | "very-dry";

/** Map calibrated dryness percent onto gauge zones.
 *
 * The scale is anchored by the calibration landmarks (water detect at
 * -100%, the dry trigger at 100%) and split at 30/60 between them, the
 * same fractions the irrigation-need zones use.
 */
export function drynessZone(drynessPct: number): GaugeZone {
  if (drynessPct <= -100) return "in-water";
  if (drynessPct < 30) return "wet";
  if (drynessPct < 60) return "moderate";
  if (drynessPct <= 100) return "dry";
  return "very-dry";
}

export const MANUAL_ACK_TIMEOUT_MS = 10_000;

export interface PendingCommand {
  type: "irrigate_now" | "pause" | "resume";
  ml?: number;
  sentAt: number;
  state: "pending" | "acked" | "timeout";
}

export interface DashState {
  nodes: NodeInfo[];
  selected: string | null;
  latest: Map<string, TelemetryPayload>;
  lastSeenAt: Map<string, number>; // wall-clock arrival time per node
  events: StoreRecord[]; // newest first, capped
  config: NodeConfigDoc | null;
  pending: PendingCommand | null;
  stream: StreamState;
  notice: string | null;
}

export const EVENT_LOG_CAP = 200;

export function createState(): DashState {
  return {
    nodes: [],
    selected: null,
    latest: new Map(),
    lastSeenAt: new Map(),
    events: [],
    config: null,
    pending: null,
    stream: "connecting",
    notice: null,
  };
}

export function setNodes(state: DashState, nodes: NodeInfo[]): void {
  state.nodes = nodes;
  if (state.selected === null && nodes.length > 0) {
    state.selected = nodes[0].node_id;
  }
}

export function selectNode(state: DashState, nodeId: string): void {
  state.selected = nodeId;
  state.events = [];
  state.config = null;
  state.pending = null;
}

export function setEvents(state: DashState, records: StoreRecord[]): void {
  // server returns time-ascending; the table shows newest first
  state.events = [...records].reverse().slice(0, EVENT_LOG_CAP);
}

/** Fold one live record into the state; called synchronously on SSE
 * arrival so the view is current the moment the record lands. */
export function applyRecord(state: DashState, record: StoreRecord, now: number): void {
  if (record.kind === "telemetry") {
    state.latest.set(record.node, record.payload as unknown as TelemetryPayload);
    state.lastSeenAt.set(record.node, now);
    return;
  }
  if (record.kind === "event") {
    if (record.node === state.selected) {
      state.events.unshift(record);
      if (state.events.length > EVENT_LOG_CAP) {
        state.events.pop();
      }
    }
    resolvePendingOnEvent(state, record.payload as unknown as EventPayload);
    return;
  }
  if (record.kind === "status") {
    const online = Boolean((record.payload as { online?: boolean }).online);
    state.nodes = state.nodes.map((n) =>
      n.node_id === record.node ? { ...n, online } : n,
    );
  }
}

// -- manual irrigation flow ---------------------------------------------------

export interface ValidationResult {
  ok: boolean;
  error?: string;
}

/** Client-side guard: reject before any request leaves the browser. */
export function validateManualMl(ml: number, config: NodeConfigDoc | null): ValidationResult {
  if (!Number.isFinite(ml) || ml <= 0) {
    return { ok: false, error: "volume must be a positive number of ml" };
  }
  const maxMl = config?.max_ml;
  if (maxMl !== undefined && ml > maxMl) {
    return { ok: false, error: `volume exceeds the node's max_ml of ${maxMl}` };
  }
  return { ok: true };
}

export function beginManualIrrigate(state: DashState, ml: number, sentAt: number): void {
  state.pending = { type: "irrigate_now", ml, sentAt, state: "pending" };
}

export function resolvePendingOnEvent(state: DashState, event: EventPayload): void {
  if (
    state.pending !== null &&
    state.pending.state === "pending" &&
    event.trigger === "manual"
  ) {
    state.pending.state = "acked";
  }
}

/** The irrigate button re-enables on ack or after the 10 s timeout. */
export function checkPendingTimeout(state: DashState, now: number): boolean {
  if (
    state.pending !== null &&
    state.pending.state === "pending" &&
    now - state.pending.sentAt >= MANUAL_ACK_TIMEOUT_MS
  ) {
    state.pending.state = "timeout";
    return true;
  }
  return false;
}

export function manualButtonDisabled(state: DashState): boolean {
  return state.pending !== null && state.pending.state === "pending";
}

// -- freshness ---------------------------------------------------------------

/** Seconds since the node's last telemetry arrived over the stream. */
export function staleness(state: DashState, nodeId: string, now: number): number | null {
  const seen = state.lastSeenAt.get(nodeId);
  return seen === undefined ? null : (now - seen) / 1000;
}
