"""Acceptance suite: the stack's exit criteria, one test per criterion.

Each test prints a single PASS line on success (run with -s to see them
live). Criteria that need the full 30001-row dataset and trained models
share session-scoped fixtures, so the suite trains Random Forest and
Gradient Boosting exactly once.
"""

import json
import threading
import time

import numpy as np
import pytest

from edgefarm import fieldsim, synthdata, tinymodel
from edgefarm.cli import main as cli_main
from edgefarm.edgenode import (
    NodeConfig,
    NodePolicy,
    ScriptedSource,
    make_node_client,
    run_loop,
)
from edgefarm.edgeserver import Store
from edgefarm.ensemble import compare_models, feature_importance
from edgefarm.ensemble.pipeline import need_matrix, train_edge_model
from edgefarm.mqttplane import (
    Broker,
    BrokerLimits,
    BrokerServer,
    Client,
    decode_packet,
    decode_varint,
    encode_packet,
    encode_varint,
    pipe_pair,
    topic_matches,
)
from edgefarm.mqttplane.codec import Pingreq, Puback, Publish, Subscribe
from edgefarm.telemetry import FEATURE_NAMES_14, ScalerParams, SensorSample
from edgefarm.ensemble.models import TreeEnsembleModel

SEED = 7
TARGET_MEANS = {"soil_adc": 2674.98, "light_lux": 2494.81, "ph": 7.50,
                "temp_c": 27.24, "hum_pct": 54.57}


def ok(criterion: str, detail: str = "") -> None:
    print(f"\nACCEPTANCE {criterion}: PASS {detail}".rstrip())


# -- shared heavyweight fixtures ------------------------------------------------


@pytest.fixture(scope="session")
def dataset():
    rows = synthdata.generate(synthdata.GeneratorConfig(n_rows=30001, seed=SEED))
    train, test = synthdata.split(rows, 0.8, seed=SEED)
    return rows, train, test


@pytest.fixture(scope="session")
def trained(dataset):
    _, train, test = dataset
    t0 = time.perf_counter()
    report, rf, gb = compare_models(train, test, seed=SEED)
    elapsed = time.perf_counter() - t0
    return {"report": report, "rf": rf, "gb": gb, "train_seconds": elapsed,
            "test": test}


@pytest.fixture(scope="session")
def edge_water_model(dataset):
    _, train, _ = dataset
    model = train_edge_model("boosting", train, seed=SEED)
    return tinymodel.load(tinymodel.export(model))


# -- criteria -------------------------------------------------------------------


def test_criterion_1_synthetic_data_fidelity(dataset, tmp_path_factory):
    rows, _, _ = dataset
    out = tmp_path_factory.mktemp("synth")
    t0 = time.perf_counter()
    assert cli_main(["synth", "--n", "30001", "--seed", "7", "--out", str(out)]) == 0
    runtime = time.perf_counter() - t0
    stats = json.loads((out / "stats.json").read_text())
    for ch, target in TARGET_MEANS.items():
        assert abs(stats[ch]["mean"] - target) <= 0.02 * target, ch
    for ch, (lo, hi) in synthdata.CLIP_BOUNDS.items():
        assert stats[ch]["min"] == lo and stats[ch]["max"] == hi, ch
    assert -0.47 <= stats["corr_temp_hum"] <= -0.37
    assert runtime < 10.0
    ok("1 synthetic-data fidelity",
       f"(corr={stats['corr_temp_hum']:.3f}, {runtime:.1f}s)")


def test_criterion_2_model_quality(trained):
    rf = trained["report"]["random_forest"]["metrics"]
    gb = trained["report"]["gradient_boosting"]["metrics"]
    t = trained["report"]["paired_t_test"]
    assert rf["r2"] >= 0.98, f"RF r2 {rf['r2']}"
    assert gb["r2"] >= 0.98, f"GB r2 {gb['r2']}"
    assert gb["r2"] >= rf["r2"]
    assert gb["mape_pct"] < rf["mape_pct"]
    # positive t favors GB: differences are |rf err| - |gb err|
    assert t["t_stat"] > 0 and t["p_value"] < 0.01
    assert trained["train_seconds"] < 300.0
    ok("2 model quality",
       f"(RF r2={rf['r2']:.4f}, GB r2={gb['r2']:.4f}, "
       f"t={t['t_stat']:.2f}, p={t['p_value']:.2e}, {trained['train_seconds']:.0f}s)")


def test_criterion_3_feature_importance(trained):
    for name in ("rf", "gb"):
        imp = feature_importance(trained[name])
        top = FEATURE_NAMES_14[int(np.argmax(imp))]
        assert top in ("moisture", "moisture_deficit"), f"{name} ranked {top} first"
    ok("3 feature importance", "(moisture first for both models)")


def test_criterion_4_tiny_model_parity_and_budgets(trained):
    gb = trained["gb"]
    test_rows = trained["test"]
    X_test, _ = need_matrix(test_rows[:1000])

    artifact = tinymodel.export(gb)
    assert len(artifact) < 1_048_576, f"artifact {len(artifact)} bytes"
    em = tinymodel.load(artifact)

    native = gb.predict(X_test)
    edge = em.infer_batch(X_test)
    max_delta = float(np.max(np.abs(native - edge)))
    assert max_delta <= 1e-5, f"parity delta {max_delta}"

    x = X_test[0].astype(np.float32)
    for _ in range(300):
        em.infer(x)
    n = 3000
    t0 = time.perf_counter()
    for _ in range(n):
        em.infer(x)
    per_us = (time.perf_counter() - t0) / n * 1e6
    assert per_us < 100.0, f"{per_us:.1f} us per inference"

    quant = tinymodel.quantize(artifact, "i16")
    assert len(quant) <= 0.65 * len(artifact)
    emq = tinymodel.load(quant)
    qpred = emq.infer_batch(X_test)
    rel_rmse = float(np.sqrt(np.mean((qpred - edge) ** 2)) / np.sqrt(np.mean(edge**2)))
    assert rel_rmse <= 0.02, f"quantized rel RMSE {rel_rmse}"
    ok("4 tiny-model parity and budgets",
       f"(delta={max_delta:.2e}, {len(artifact)}B -> {len(quant)}B, {per_us:.0f}us)")


BLOCK1 = [(3723, 24.9, 45.8), (3718, 24.9, 45.8), (3719, 24.9, 45.8), (3718, 24.9, 45.7),
          (3719, 24.9, 45.8), (3723, 24.9, 45.8), (3719, 24.9, 45.8), (3728, 24.9, 45.8),
          (3717, 24.9, 45.8), (3721, 24.9, 45.9), (3722, 24.9, 45.8), (3725, 24.9, 45.8),
          (3726, 24.9, 45.8), (3717, 25.0, 45.8)]
BLOCK1_DRYNESS = [122, 121, 121, 121, 121, 122, 121, 122, 121, 122, 122, 122, 122, 121]
BLOCK3 = [(2151, 25.2, 46.3), (2103, 25.2, 46.3), (2338, 25.2, 46.2), (2855, 25.2, 46.1),
          (2031, 25.2, 46.1), (1351, 25.2, 46.1), (1382, 25.2, 46.1), (1040, 25.2, 46.1),
          (1285, 25.2, 46.1), (1227, 25.2, 46.1), (1245, 25.2, 46.1), (1276, 25.2, 46.0),
          (1232, 25.2, 46.0), (1312, 25.2, 45.9)]


def _constant_edge_model(ml):
    native = TreeEnsembleModel(kind="boosting", trees=[], init_value=ml, learning_rate=0.1,
                               scaler=ScalerParams.identity(8),
                               feature_names=tuple(f"f{i}" for i in range(8)))
    return tinymodel.load(tinymodel.export(native))


def test_criterion_5_device_log_replay():
    samples = [SensorSample(ts_ms=i * 2000, soil_adc=s, temp_c=t, hum_pct=h, light_lux=1200)
               for i, (s, t, h) in enumerate(BLOCK1)]
    summary = run_loop(ScriptedSource(samples), NodeConfig(), model=_constant_edge_model(14.99))
    lines = summary.transcript.splitlines()

    for i, dry in enumerate(BLOCK1_DRYNESS):
        soil, temp, hum = BLOCK1[i]
        assert lines[i] == f"[Sample] Soil: {soil} ({dry}% dry) Temp: {temp:.1f}°C Hum: {hum:.1f}%"

    inputs = lines[14]
    soil_n = float(inputs.split("Soil: ")[1].split(" ")[0])
    assert abs(soil_n - 1.0101) <= 0.003
    inter = inputs.split("Interactions: [")[1].rstrip("]").split(", ")
    ist, ish, ith = (float(v) for v in inter)
    assert abs(ist - 0.4306) <= 0.002
    assert abs(ish - 0.4628) <= 0.002
    assert abs(ith - 0.1953) <= 0.002

    (event,) = summary.events
    assert event.dispensed_ml == 15.0
    assert abs(event.duration_ms - 3570) <= 2

    in_water = [SensorSample(ts_ms=i * 2000, soil_adc=s, temp_c=t, hum_pct=h, light_lux=1200)
                for i, (s, t, h) in enumerate(BLOCK3)]
    summary3 = run_loop(ScriptedSource(in_water), NodeConfig(), model=_constant_edge_model(14.99))
    (skip,) = summary3.events
    assert skip.skipped_reason == "in_water" and skip.dispensed_ml == 0.0
    assert "[Prediction] Soil in water, no watering needed (0.00 ml)" in summary3.transcript
    ok("5 device-log replay",
       f"(soil_n={soil_n:.4f}, inter=[{ist:.4f},{ish:.4f},{ith:.4f}], {event.duration_ms}ms)")


def test_criterion_6_mqtt_conformance():
    t0 = time.perf_counter()

    # varint boundary set round-trips
    for n in (0, 127, 128, 16383, 16384, 2097151, 2097152, 268435455):
        enc = encode_varint(n)
        assert decode_varint(enc) == (n, len(enc))

    # codec round-trip across 1e5 generated packets
    rng = np.random.default_rng(2024)
    for _ in range(100_000):
        kind = rng.integers(0, 5)
        if kind == 0:
            pkt = Publish(topic=f"farm/n{rng.integers(0, 9)}/telemetry",
                          payload=rng.bytes(int(rng.integers(0, 64))), qos=0,
                          retain=bool(rng.integers(0, 2)))
        elif kind == 1:
            pkt = Publish(topic="farm/n1/event/irrigation", payload=rng.bytes(16),
                          qos=1, packet_id=int(rng.integers(1, 65535)),
                          dup=bool(rng.integers(0, 2)))
        elif kind == 2:
            pkt = Puback(packet_id=int(rng.integers(1, 65535)))
        elif kind == 3:
            pkt = Subscribe(packet_id=int(rng.integers(1, 65535)),
                            topics=[("farm/+/telemetry", int(rng.integers(0, 2)))])
        else:
            pkt = Pingreq()
        dec, consumed = decode_packet(encode_packet(pkt))
        assert dec == pkt and consumed == len(encode_packet(pkt))

    # wildcard matcher equals the brute-force reference on 1e4 cases
    def reference(filt, topic):
        def rec(f, t):
            if not f:
                return not t
            if f[0] == "#":
                return True
            if not t:
                return False
            if f[0] == "+" or f[0] == t[0]:
                return rec(f[1:], t[1:])
            return False
        return rec(filt.split("/"), topic.split("/"))

    words = ["farm", "n1", "n2", "telemetry", "event", "cmd", "a", "b"]
    checked = 0
    rng = np.random.default_rng(99)
    while checked < 10_000:
        topic = "/".join(words[rng.integers(len(words))] for _ in range(rng.integers(1, 5)))
        f_levels = []
        for _ in range(rng.integers(1, 5)):
            r = rng.integers(0, 10)
            f_levels.append("+" if r < 2 else "#" if r == 2 else words[rng.integers(len(words))])
        filt = "/".join(f_levels)
        try:
            from edgefarm.mqttplane import validate_filter

            validate_filter(filt)
        except Exception:
            continue
        assert topic_matches(filt, topic) == reference(filt, topic), (filt, topic)
        checked += 1

    # retained delivery on subscribe
    broker = Broker(limits=BrokerLimits(retry_interval_s=0.1))

    def connect(loss=0.0, seed=0, spare=2):
        counter = [0]

        def fn():
            counter[0] += 1
            a, b = pipe_pair(loss_rate=loss, loss_seed=seed + 1000 * counter[0], spare_first=spare)
            threading.Thread(target=broker.serve_transport, args=(b,), daemon=True).start()
            return a
        return fn

    pub = Client("pub", connect_fn=connect(), keep_alive=5, retry_interval_s=0.1,
                 backoff_initial_s=0.05).start()
    assert pub.wait_connected(3)
    pub.publish("farm/n1/config", b'{"cooldown_s": 60}', qos=1, retain=True)
    assert pub.flush(3)
    got = []
    sub = Client("sub", connect_fn=connect(), keep_alive=5, retry_interval_s=0.1,
                 on_message=lambda t, p, q, r, d: got.append((t, p, r))).start()
    assert sub.wait_connected(3)
    sub.subscribe("farm/n1/config", qos=1)
    deadline = time.monotonic() + 3
    while time.monotonic() < deadline and not got:
        time.sleep(0.01)
    assert got and got[0][1] == b'{"cooldown_s": 60}' and got[0][2] is True
    sub.stop(); pub.stop()

    # QoS-1 at-least-once under 20% frame loss, both directions
    got2 = []
    lossy_sub = Client("lsub", connect_fn=connect(loss=0.2, seed=11), keep_alive=5,
                       retry_interval_s=0.1, backoff_initial_s=0.05, connect_timeout_s=0.5,
                       on_message=lambda t, p, q, r, d: got2.append(p)).start()
    assert lossy_sub.wait_connected(10)
    lossy_sub.subscribe("lossy/x", qos=1)
    time.sleep(0.3)
    lossy_pub = Client("lpub", connect_fn=connect(loss=0.2, seed=21), keep_alive=5,
                       retry_interval_s=0.1, backoff_initial_s=0.05,
                       connect_timeout_s=0.5).start()
    assert lossy_pub.wait_connected(10)
    n_msgs = 30
    for i in range(n_msgs):
        lossy_pub.publish("lossy/x", f"m{i}".encode(), qos=1)
    assert lossy_pub.flush(20)
    expected = {f"m{i}".encode() for i in range(n_msgs)}
    deadline = time.monotonic() + 20
    while time.monotonic() < deadline and not expected.issubset(set(got2)):
        time.sleep(0.05)
    assert expected.issubset(set(got2)), f"missing {expected - set(got2)}"
    lossy_pub.stop(); lossy_sub.stop(); broker.stop()

    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    ok("6 mqtt conformance", f"({elapsed:.1f}s)")


def test_criterion_7_closed_loop_savings(edge_water_model):
    t0 = time.perf_counter()
    scenario = fieldsim.ScenarioConfig(duration_days=14.0)
    model_policy = NodePolicy(NodeConfig(mode="model"), edge_water_model)
    timer = fieldsim.TimerPolicy(dose_ml=15.0, interval_s=21600.0)
    rep_model, rep_timer = fieldsim.run_experiment(model_policy, timer, scenario, seed=42)
    runtime = time.perf_counter() - t0
    ratio = rep_model.total_ml / rep_timer.total_ml
    assert ratio <= 0.9, f"water ratio {ratio:.3f}"
    assert rep_model.time_in_band_pct >= 90.0
    assert runtime < 30.0
    ok("7 closed-loop savings",
       f"(model {rep_model.total_ml}ml vs timer {rep_timer.total_ml}ml = "
       f"{100 * (1 - ratio):.1f}% saved, band {rep_model.time_in_band_pct}%, {runtime:.1f}s)")


class _PacedSource(ScriptedSource):
    """Scripted samples with a small real-time gap so a broker can be
    killed and restarted mid-run."""

    def __init__(self, samples, gap_s=0.02):
        super().__init__(samples)
        self.gap_s = gap_s

    def samples(self):
        for s in super().samples():
            time.sleep(self.gap_s)
            yield s


def test_criterion_8_offline_autonomy():
    n_decisions = 6
    samples = [SensorSample(ts_ms=i * 2000, soil_adc=3700.0, temp_c=25.0, hum_pct=50.0,
                            light_lux=900.0) for i in range(14 * n_decisions)]
    cfg = NodeConfig(node_id="auto1", cooldown_s=0)
    model = _constant_edge_model(10.0)

    # reference: fully offline run
    offline = run_loop(ScriptedSource(samples), cfg, model=model)
    assert offline.n_decisions == n_decisions

    # connected run with a broker killed mid-run and restarted
    import socket

    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()

    server1 = BrokerServer(port=port, limits=BrokerLimits(retry_interval_s=0.1)).start()
    got = []
    watcher = Client("watch", port=port, keep_alive=2, retry_interval_s=0.1,
                     backoff_initial_s=0.05,
                     on_message=lambda t, p, q, r, d: got.append(json.loads(p))).start()
    assert watcher.wait_connected(3)
    watcher.subscribe("farm/auto1/event/irrigation", qos=1)
    time.sleep(0.2)

    # a broker restart wipes subscriptions, so the node's buffered flush is
    # only observable if the watcher re-attaches first; gate the node's
    # reconnect on the observer being ready to keep the check deterministic
    from edgefarm.mqttplane.transport import tcp_connect

    def node_connect():
        deadline = time.monotonic() + 8
        while time.monotonic() < deadline:
            if watcher.connected and watcher.wait_subscriptions(0.05):
                return tcp_connect("127.0.0.1", port)
            time.sleep(0.02)
        raise OSError("observer never re-attached")

    mqtt = make_node_client(cfg, connect_fn=node_connect, keep_alive=2,
                            retry_interval_s=0.1, backoff_initial_s=0.1,
                            connect_timeout_s=0.5)

    server2_holder = {}

    def chaos():
        deadline = time.monotonic() + 10
        while time.monotonic() < deadline and len(got) < 2:
            time.sleep(0.01)
        server1.stop()  # broker dies mid-run
        time.sleep(0.6)
        server2_holder["server"] = BrokerServer(
            port=port, limits=BrokerLimits(retry_interval_s=0.1)).start()

    chaos_thread = threading.Thread(target=chaos, daemon=True)
    chaos_thread.start()
    online = run_loop(_PacedSource(samples), cfg, mqtt=mqtt, model=model)
    chaos_thread.join(timeout=15)

    assert online.decision_tuples() == offline.decision_tuples(), \
        "broker loss changed control decisions"
    assert mqtt.dropped_qos1 == 0

    deadline = time.monotonic() + 10
    def distinct():
        return {(e["ts"], e["predicted_ml"]) for e in got}
    while time.monotonic() < deadline and len(distinct()) < n_decisions:
        time.sleep(0.05)
    assert len(distinct()) == n_decisions, \
        f"only {len(distinct())} of {n_decisions} events arrived after reconnect"
    watcher.stop()
    server2_holder["server"].stop()
    ok("8 offline autonomy",
       f"({n_decisions} identical decisions, all events flushed after broker restart)")


def test_criterion_9_store_durability(tmp_path):
    store = Store(tmp_path)
    for i in range(200):
        store.append("telemetry", "n1", 1000 + i, {"soil_adc": 3000 + i})
    (path,) = sorted((tmp_path / "n1").glob("*.ndjson"))
    data = path.read_bytes()
    path.write_bytes(data[:-17])  # crash: final line half-written

    fresh = Store(tmp_path)
    records = fresh.query("n1", 0, 10_000)
    assert len(records) >= 199  # at most one record lost
    assert [r["ts"] for r in records] == list(range(1000, 1000 + len(records)))
    assert fresh.recovered_partials == 1
    ok("9 store durability", f"({len(records)}/200 records after truncation)")


def test_criterion_10_dashboard_independence():
    # The dashboard itself is a separate TypeScript package (frontend/) with
    # its own build and test suite covering the live view, manual irrigation,
    # CSV download header, and config round-trip. Here we assert the primary
    # stack is complete without it: the API app builds and serves with no
    # static dashboard directory mounted.
    from fastapi.testclient import TestClient

    from edgefarm.edgeserver import IngestService, StreamHub, make_app

    class _NoopClient:
        def subscribe(self, *a, **kw):
            pass

        def publish(self, *a, **kw):
            pass

    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        store = Store(tmp)
        ingest = IngestService(_NoopClient(), store)
        app = make_app(store, ingest, StreamHub(), static_dir=None)
        http = TestClient(app)
        assert http.get("/api/health").json()["status"] == "ok"
        assert http.get("/api/nodes").json() == []
    ok("10 dashboard independence", "(primary suite runs with dashboard absent)")
