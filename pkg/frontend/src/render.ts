// HTML/SVG builders: pure functions from state to markup strings, kept
// DOM-free so they run under plain node in tests.

import type { HistoryBucket, NodeConfigDoc, NodeInfo, StoreRecord, TelemetryPayload } from "./api.js";
import { drynessZone } from "./model.js";

function esc(value: unknown): string {
  return String(value)
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

// -- node list ---------------------------------------------------------------

export function renderNodeList(nodes: NodeInfo[], selected: string | null): string {
  if (nodes.length === 0) {
    return `<p class="empty">no nodes reporting yet</p>`;
  }
  const items = nodes
    .map((n) => {
      const cls = [
        "node",
        n.online ? "online" : "offline",
        n.node_id === selected ? "selected" : "",
      ].join(" ").trim();
      return `<li class="${cls}" data-node="${esc(n.node_id)}">
        <span class="dot"></span>${esc(n.node_id)}
        <span class="state">${n.online ? "online" : "offline"}</span></li>`;
    })
    .join("");
  return `<ul class="node-list">${items}</ul>`;
}

// -- dryness gauge -------------------------------------------------------------

const GAUGE_MIN = -150;
const GAUGE_MAX = 150;

/** Half-circle gauge; the needle position clamps to the scale but the
 * label shows the true value, so 122% reads as pegged-very-dry. */
export function renderGauge(drynessPct: number): string {
  const zone = drynessZone(drynessPct);
  const clamped = Math.min(Math.max(drynessPct, GAUGE_MIN), GAUGE_MAX);
  const frac = (clamped - GAUGE_MIN) / (GAUGE_MAX - GAUGE_MIN);
  const angle = 180 * frac - 180; // -180 (left) .. 0 (right)
  return `<div class="gauge zone-${zone}" data-zone="${zone}">
  <svg viewBox="0 0 200 110" role="img" aria-label="dryness ${drynessPct}%">
    <path d="M 10 100 A 90 90 0 0 1 190 100" class="gauge-track"/>
    <g transform="rotate(${angle.toFixed(1)} 100 100)">
      <line x1="100" y1="100" x2="190" y2="100" class="gauge-needle"/>
    </g>
    <circle cx="100" cy="100" r="6" class="gauge-hub"/>
  </svg>
  <div class="gauge-value">${drynessPct}% dry</div>
  <div class="gauge-zone-label">${zone.replace("-", " ")}</div>
</div>`;
}

export function renderLatestCard(payload: TelemetryPayload | null): string {
  if (payload === null) {
    return `<div class="card latest"><p class="empty">no telemetry yet</p></div>`;
  }
  const ph = payload.ph === null || payload.ph === undefined ? "-" : payload.ph.toFixed(1);
  return `<div class="card latest">
  ${renderGauge(payload.dryness_pct)}
  <dl class="readings">
    <div><dt>soil</dt><dd>${Math.round(payload.soil_adc)} counts</dd></div>
    <div><dt>temperature</dt><dd>${payload.temp_c.toFixed(1)} &deg;C</dd></div>
    <div><dt>humidity</dt><dd>${payload.hum_pct.toFixed(1)} %</dd></div>
    <div><dt>light</dt><dd>${Math.round(payload.light_lux)} lux</dd></div>
    <div><dt>pH</dt><dd>${ph}</dd></div>
  </dl>
</div>`;
}

// -- time-series chart ----------------------------------------------------------

export interface ChartSpec {
  field: string;
  label: string;
  color: string;
}

export const CHART_FIELDS: ChartSpec[] = [
  { field: "soil_adc", label: "soil (counts)", color: "#7c5cff" },
  { field: "temp_c", label: "temperature (°C)", color: "#ff7043" },
  { field: "hum_pct", label: "humidity (%)", color: "#29b6f6" },
];

const W = 640;
const H = 180;
const PAD = 34;

/** Polyline chart over server-side downsampled buckets; the dashboard never
 * resamples on the client. */
export function renderChart(buckets: HistoryBucket[], spec: ChartSpec): string {
  const values = buckets
    .filter((b) => typeof b[spec.field] === "number")
    .map((b) => ({ ts: b.ts, v: b[spec.field] as number }));
  if (values.length === 0) {
    return `<svg class="chart" viewBox="0 0 ${W} ${H}">
  <line x1="${PAD}" y1="${H - PAD}" x2="${W - 8}" y2="${H - PAD}" class="axis"/>
  <line x1="${PAD}" y1="8" x2="${PAD}" y2="${H - PAD}" class="axis"/>
  <text x="${W / 2}" y="${H / 2}" text-anchor="middle" class="empty">no data</text>
</svg>`;
  }
  const t0 = values[0].ts;
  const t1 = values[values.length - 1].ts;
  const vMin = Math.min(...values.map((p) => p.v));
  const vMax = Math.max(...values.map((p) => p.v));
  const spanT = Math.max(t1 - t0, 1);
  const spanV = Math.max(vMax - vMin, 1e-9);
  const x = (ts: number) => PAD + ((ts - t0) / spanT) * (W - PAD - 8);
  const y = (v: number) => H - PAD - ((v - vMin) / spanV) * (H - PAD - 8);
  const points = values.map((p) => `${x(p.ts).toFixed(1)},${y(p.v).toFixed(1)}`).join(" ");
  return `<svg class="chart" viewBox="0 0 ${W} ${H}">
  <line x1="${PAD}" y1="${H - PAD}" x2="${W - 8}" y2="${H - PAD}" class="axis"/>
  <line x1="${PAD}" y1="8" x2="${PAD}" y2="${H - PAD}" class="axis"/>
  <text x="${PAD - 4}" y="${y(vMax).toFixed(1)}" text-anchor="end" class="tick">${vMax.toFixed(1)}</text>
  <text x="${PAD - 4}" y="${y(vMin).toFixed(1)}" text-anchor="end" class="tick">${vMin.toFixed(1)}</text>
  <polyline points="${points}" fill="none" stroke="${spec.color}" stroke-width="2"/>
  <text x="${W / 2}" y="${H - 6}" text-anchor="middle" class="chart-label">${esc(spec.label)}</text>
</svg>`;
}

// -- events table ---------------------------------------------------------------

export function renderEventsTable(events: StoreRecord[]): string {
  if (events.length === 0) {
    return `<p class="empty">no irrigation events yet</p>`;
  }
  const rows = events
    .map((rec) => {
      const p = rec.payload as Record<string, unknown>;
      const when = new Date(rec.ts).toISOString().replace("T", " ").slice(0, 19);
      const skipped = p.skipped_reason ? ` <span class="skip">(${esc(p.skipped_reason)})</span>` : "";
      const cls = `trigger-${esc(p.trigger)}${rec.duplicate ? " duplicate" : ""}`;
      return `<tr class="${cls}">
        <td>${when}</td>
        <td><span class="badge">${esc(p.trigger)}</span></td>
        <td>${Number(p.predicted_ml).toFixed(2)}</td>
        <td>${Number(p.dispensed_ml).toFixed(1)}${skipped}</td>
        <td>${p.duration_ms} ms</td></tr>`;
    })
    .join("");
  return `<table class="events">
  <thead><tr><th>time (UTC)</th><th>trigger</th><th>predicted ml</th><th>dispensed ml</th><th>pump</th></tr></thead>
  <tbody>${rows}</tbody></table>`;
}

// -- config form -------------------------------------------------------------------

export const CONFIG_FIELDS: { key: keyof NodeConfigDoc; label: string; step: string }[] = [
  { key: "min_ml", label: "min dose (ml)", step: "0.1" },
  { key: "max_ml", label: "max dose (ml)", step: "1" },
  { key: "cooldown_s", label: "cooldown (s)", step: "1" },
  { key: "window_len", label: "window length", step: "1" },
  { key: "ema_alpha", label: "smoothing alpha", step: "0.01" },
  { key: "pump_ms_per_ml", label: "pump ms per ml", step: "1" },
];

export function renderConfigForm(config: NodeConfigDoc | null): string {
  if (config === null) {
    return `<p class="empty">no retained config for this node yet</p>`;
  }
  const fields = CONFIG_FIELDS.map(({ key, label, step }) => {
    const value = config[key];
    return `<label>${esc(label)}
      <input name="${key}" type="number" step="${step}" value="${value ?? ""}"/></label>`;
  }).join("");
  const mode = config.mode ?? "model";
  return `<form class="config-form" data-role="config">
  ${fields}
  <label>mode
    <select name="mode">
      <option value="model"${mode === "model" ? " selected" : ""}>model</option>
      <option value="rule"${mode === "rule" ? " selected" : ""}>rule</option>
    </select></label>
  <button type="submit">save config</button>
  <span class="form-error" data-role="config-error"></span>
</form>`;
}

export function renderStreamBanner(state: string): string {
  if (state === "live") {
    return "";
  }
  const text = state === "connecting" ? "connecting to live stream..." :
    "server unreachable - retrying";
  return `<div class="banner ${state}">${text}</div>`;
}
