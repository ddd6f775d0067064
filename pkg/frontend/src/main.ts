// Page wiring: one ApiClient, one SSE connection, event delegation.
// All state lives in the view-model; this file only moves data between
// the API, the model, and the DOM.

import { ApiClient, LiveStream, type NodeConfigDoc, type StoreRecord } from "./api.js";
import {
  applyRecord,
  beginManualIrrigate,
  checkPendingTimeout,
  createState,
  manualButtonDisabled,
  selectNode,
  setEvents,
  setNodes,
  validateManualMl,
} from "./model.js";
import {
  CHART_FIELDS,
  renderChart,
  renderConfigForm,
  renderEventsTable,
  renderLatestCard,
  renderNodeList,
  renderStreamBanner,
} from "./render.js";

const api = new ApiClient("");
const state = createState();

const el = (id: string) => document.getElementById(id)!;

const RANGES: Record<string, number> = {
  "15m": 15 * 60_000,
  "2h": 2 * 3600_000,
  "24h": 24 * 3600_000,
  "7d": 7 * 86_400_000,
};
let chartRange = "2h";
let chartBuckets = 60;

function renderAll(): void {
  el("nodes").innerHTML = renderNodeList(state.nodes, state.selected);
  const latest = state.selected ? state.latest.get(state.selected) ?? null : null;
  el("latest").innerHTML = renderLatestCard(latest);
  el("events").innerHTML = renderEventsTable(state.events);
  el("banner").innerHTML = renderStreamBanner(state.stream);
  renderControls();
}

function renderControls(): void {
  const btn = el("irrigate-btn") as HTMLButtonElement;
  btn.disabled = manualButtonDisabled(state) || state.selected === null;
  const status = el("cmd-status");
  if (state.pending?.state === "pending") {
    status.textContent = `waiting for manual event (${state.pending.ml} ml)...`;
    status.className = "pending";
  } else if (state.pending?.state === "acked") {
    status.textContent = "manual irrigation confirmed";
    status.className = "ok";
  } else if (state.pending?.state === "timeout") {
    status.textContent = "no confirmation within 10 s - check the node";
    status.className = "warn";
  } else {
    status.textContent = "";
    status.className = "";
  }
  if (state.notice) {
    el("notice").textContent = state.notice;
  } else {
    el("notice").textContent = "";
  }
}

async function refreshChart(): Promise<void> {
  if (!state.selected) return;
  const to = Date.now();
  const from = to - RANGES[chartRange];
  try {
    const { buckets } = await api.history(state.selected, from, to, chartBuckets);
    el("charts").innerHTML = CHART_FIELDS.map((spec) => renderChart(buckets, spec)).join("");
  } catch {
    // history is best-effort; the latest card still updates via SSE
  }
}

async function refreshEvents(): Promise<void> {
  if (!state.selected) return;
  try {
    const { records } = await api.events(state.selected);
    setEvents(state, records);
  } catch {
    state.events = [];
  }
}

async function refreshConfig(): Promise<void> {
  if (!state.selected) return;
  try {
    state.config = await api.getConfig(state.selected);
  } catch {
    state.config = null;
  }
  el("config").innerHTML = renderConfigForm(state.config);
}

async function loadNode(): Promise<void> {
  await Promise.all([refreshEvents(), refreshConfig(), refreshChart()]);
  if (state.selected) {
    try {
      const latest = await api.latest(state.selected);
      applyRecord(state, latest, Date.now());
    } catch {
      // node may not have reported yet
    }
  }
  renderAll();
}

async function boot(): Promise<void> {
  try {
    setNodes(state, await api.nodes());
  } catch {
    state.stream = "offline";
  }
  renderAll();
  await loadNode();

  const stream = new LiveStream(
    api.streamUrl(),
    (record: StoreRecord) => {
      applyRecord(state, record, Date.now());
      renderAll();
    },
    (s) => {
      state.stream = s;
      renderAll();
    },
  );
  stream.start();

  // the 10 s manual-ack timeout and chart refresh tick once per interval;
  // nothing polls faster than once a second while the stream is live
  setInterval(() => {
    if (checkPendingTimeout(state, Date.now())) {
      renderAll();
    }
  }, 1000);
  setInterval(refreshChart, 30_000);
}

// -- event delegation ------------------------------------------------------------

document.addEventListener("click", async (ev) => {
  const target = ev.target as HTMLElement;
  const nodeItem = target.closest("[data-node]") as HTMLElement | null;
  if (nodeItem?.dataset.node) {
    selectNode(state, nodeItem.dataset.node);
    renderAll();
    await loadNode();
    return;
  }
  if (target.id === "irrigate-btn") {
    const input = el("irrigate-ml") as HTMLInputElement;
    const ml = Number(input.value);
    const verdict = validateManualMl(ml, state.config);
    if (!verdict.ok) {
      state.notice = verdict.error ?? "invalid volume";
      renderControls();
      return;
    }
    state.notice = null;
    beginManualIrrigate(state, ml, Date.now());
    renderControls();
    try {
      await api.sendCmd(state.selected!, { type: "irrigate_now", ml });
    } catch (e) {
      state.pending = null;
      state.notice = e instanceof Error ? e.message : "command failed";
    }
    renderAll();
    return;
  }
  if (target.id === "pause-btn" || target.id === "resume-btn") {
    const type = target.id === "pause-btn" ? "pause" : "resume";
    try {
      await api.sendCmd(state.selected!, { type });
      state.notice = `${type} sent`;
    } catch (e) {
      state.notice = e instanceof Error ? e.message : "command failed";
    }
    renderControls();
    return;
  }
  if (target.id === "download-csv") {
    if (state.selected) {
      const to = Date.now();
      window.location.href = api.exportCsvUrl(state.selected, to - RANGES[chartRange], to);
    }
    return;
  }
  const rangeBtn = target.closest("[data-range]") as HTMLElement | null;
  if (rangeBtn?.dataset.range) {
    chartRange = rangeBtn.dataset.range;
    document.querySelectorAll("[data-range]").forEach((b) =>
      b.classList.toggle("selected", (b as HTMLElement).dataset.range === chartRange));
    await refreshChart();
  }
});

document.addEventListener("submit", async (ev) => {
  const form = ev.target as HTMLFormElement;
  if (form.dataset.role !== "config" || !state.selected) return;
  ev.preventDefault();
  const doc: NodeConfigDoc = { ...(state.config ?? {}) };
  const data = new FormData(form);
  for (const [key, raw] of data.entries()) {
    if (raw === "") continue;
    if (key === "mode") {
      doc.mode = raw as "model" | "rule";
    } else {
      (doc as Record<string, unknown>)[key] = Number(raw);
    }
  }
  const errorEl = form.querySelector("[data-role=config-error]") as HTMLElement;
  try {
    const saved = await api.putConfig(state.selected, doc);
    state.config = saved.config;
    errorEl.textContent = "saved";
    errorEl.className = "form-error ok";
  } catch (e) {
    // optimistic edit reverts to the server's state on rejection
    errorEl.textContent = e instanceof Error ? e.message : "rejected";
    errorEl.className = "form-error warn";
    await refreshConfig();
  }
});

boot();
