"""Single entry point for the whole stack.

Subcommands: synth, train, eval, compare, export-model, inspect-model,
infer, broker, server, node, simulate, bench. Every subcommand is
non-interactive; exit codes are 0 (success), 1 (contract violation),
2 (usage error, from argparse).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import edgenode, fieldsim, synthdata, tinymodel
from .ensemble import (
    Hyperparams,
    GradientBoostingParams,
    RandomForestParams,
    compare_models,
    evaluate,
    format_comparison,
    learning_curve,
)
from .ensemble.pipeline import edge_matrix, need_matrix, train_edge_model, train_need_model


class ContractViolation(Exception):
    pass


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- synth ------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.config:
        cfg = synthdata.GeneratorConfig.from_json(Path(args.config).read_text())
        if args.n is not None or args.seed is not None:
            from dataclasses import replace

            cfg = replace(cfg, n_rows=args.n or cfg.n_rows,
                          seed=cfg.seed if args.seed is None else args.seed)
    else:
        cfg = synthdata.GeneratorConfig(n_rows=args.n or 30001,
                                        seed=7 if args.seed is None else args.seed)
    out = _out_dir(args)
    t0 = time.perf_counter()
    rows = synthdata.generate(cfg)
    synthdata.write_csv(out / "need.csv", rows, "need")
    synthdata.write_csv(out / "water.csv", rows, "water")
    (out / "generator_config.json").write_text(cfg.to_json() + "\n")
    stats = synthdata.dataset_stats(rows)
    stats["generate_seconds"] = round(time.perf_counter() - t0, 3)
    # realized zone fractions reported next to the reference shares
    stats["need"]["reference_zones_pct"] = {"low": 7.3, "medium": 84.4, "high": 8.3}
    _write_json(out / "stats.json", stats)
    z = stats["need"]
    print(f"{cfg.n_rows} rows (seed {cfg.seed}) in {stats['generate_seconds']}s -> {out}")
    print(f"need: mean {z['mean']:.4f} sd {z['std']:.4f} | zones low/med/high "
          f"{100*z['zone_low']:.1f}/{100*z['zone_medium']:.1f}/{100*z['zone_high']:.1f}% "
          f"(reference 7.3/84.4/8.3%)")
    print(f"corr(temp,hum) = {stats['corr_temp_hum']:.4f}")
    return 0


# -- training and evaluation ---------------------------------------------------

def _load_rows(path):
    rows, task = synthdata.read_csv(path)
    if not rows:
        raise ContractViolation(f"{path}: no data rows")
    return rows, task


def cmd_train(args) -> int:
    rows, task = _load_rows(args.data)
    seed = args.seed if args.seed is not None else 7
    kind = {"rf": "forest", "gb": "boosting"}[args.kind]
    if task == "need":
        model = train_need_model(kind, rows, seed=seed)
    else:
        model = train_edge_model(kind, rows, seed=seed)
    artifact = tinymodel.export(model)
    if args.quantize:
        artifact = tinymodel.quantize(artifact, args.quantize)
    out = Path(args.out or f"{task}_{args.kind}.tml1")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(artifact)
    summary = model.summary()
    summary["task"] = task
    summary["artifact_bytes"] = len(artifact)
    _write_json(out.with_suffix(".json"), summary)
    print(f"trained {args.kind} on {len(rows)} {task} rows in "
          f"{model.train_time_s:.1f}s -> {out} ({len(artifact)} bytes)")
    return 0


def cmd_eval(args) -> int:
    rows, task = _load_rows(args.data)
    em = tinymodel.load(Path(args.model).read_bytes())
    X, y = (need_matrix(rows) if task == "need" else edge_matrix(rows))
    if em.n_features != X.shape[1]:
        raise ContractViolation(
            f"model expects {em.n_features} features but the {task} task has {X.shape[1]}"
        )
    report = evaluate(_ArtifactModel(em), X, y)
    doc = report.to_dict()
    doc["task"] = task
    doc["n_rows"] = len(rows)
    if args.out:
        _write_json(Path(args.out), doc)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


class _ArtifactModel:
    """Gives an EdgeModel the .predict face the metrics suite expects."""

    train_time_s = 0.0

    def __init__(self, em):
        self.em = em

    def predict(self, X):
        return self.em.infer_batch(X)


def _strip_timings(report: dict) -> tuple[dict, dict]:
    det = json.loads(json.dumps(report))
    timings = {}
    for side in ("random_forest", "gradient_boosting"):
        m = det[side]["metrics"]
        timings[side] = {
            "train_time_s": m.pop("train_time_s"),
            "infer_us_per_sample": m.pop("infer_us_per_sample"),
        }
        det[side]["summary"].pop("train_time_s", None)
    return det, timings


def cmd_compare(args) -> int:
    train_rows, task = _load_rows(args.train)
    test_rows, task2 = _load_rows(args.test)
    if task != "need" or task2 != "need":
        raise ContractViolation("compare expects need-task CSVs")
    seed = args.seed if args.seed is not None else 7
    hp = Hyperparams()
    if args.hp:
        hp = _parse_hp_overrides(args.hp)
    out = _out_dir(args)
    report, rf, gb = compare_models(train_rows, test_rows, hp=hp, seed=seed)
    det, timings = _strip_timings(report)
    _write_json(out / "comparison.json", det)
    _write_json(out / "comparison_timings.json", timings)
    text = format_comparison(report)
    (out / "comparison.txt").write_text(text + "\n")
    metric_keys = ("r2", "explained_variance", "rmse", "mae", "mape_pct",
                   "p95_abs_err", "mean_bias")
    csv_lines = ["metric,random_forest,gradient_boosting"]
    for key in metric_keys:
        csv_lines.append(
            f"{key},{det['random_forest']['metrics'][key]!r},"
            f"{det['gradient_boosting']['metrics'][key]!r}"
        )
    (out / "metrics.csv").write_text("\n".join(csv_lines) + "\n")
    print(text)
    if args.learning_curve:
        X, y = need_matrix(train_rows)
        from .ensemble import fit_gradient_boosting, fit_random_forest
        from .telemetry import fit_scaler, standardize

        scaler = fit_scaler(X)
        Z = standardize(X, scaler)
        for name, fit in (("rf", lambda a, b: fit_random_forest(a, b, hp.rf, seed=seed)),
                          ("gb", lambda a, b: fit_gradient_boosting(a, b, hp.gb, seed=seed))):
            rows = learning_curve(Z, y, fit, seed=seed)
            lines = ["fraction,train_r2,val_r2"] + [
                f"{f},{tr:.6f},{vr:.6f}" for f, tr, vr in rows
            ]
            (out / f"learning_curve_{name}.csv").write_text("\n".join(lines) + "\n")
    return 0


def _parse_hp_overrides(pairs) -> Hyperparams:
    """rf.n_estimators=10 gb.learning_rate=0.05 style overrides."""
    rf_kw, gb_kw = {}, {}
    for pair in pairs:
        try:
            key, value = pair.split("=", 1)
            group, name = key.split(".", 1)
        except ValueError:
            raise ContractViolation(f"bad --hp override {pair!r}") from None
        target = {"rf": rf_kw, "gb": gb_kw}.get(group)
        if target is None:
            raise ContractViolation(f"unknown hyperparameter group {group!r}")
        parsed = json.loads(value) if value not in ("true", "false") else value == "true"
        target[name] = parsed
    try:
        return Hyperparams(rf=RandomForestParams(**rf_kw), gb=GradientBoostingParams(**gb_kw))
    except (TypeError, ValueError) as e:
        raise ContractViolation(f"invalid hyperparameters: {e}") from None


# -- model artifact utilities ---------------------------------------------------

def cmd_export_model(args) -> int:
    data = Path(args.model).read_bytes()
    if args.quantize:
        data = tinymodel.quantize(data, args.quantize)
    out = Path(args.out or (args.model + ".out"))
    out.write_bytes(data)
    print(f"{out} ({len(data)} bytes)")
    return 0


def cmd_inspect_model(args) -> int:
    info = tinymodel.inspect_artifact(Path(args.model).read_bytes())
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


def cmd_infer(args) -> int:
    em = tinymodel.load(Path(args.model).read_bytes())
    values = [float(v) for v in args.input.split(",")]
    pred = em.infer(np.array(values, dtype=np.float32))
    print(f"{pred:.6f}")
    return 0


def cmd_bench(args) -> int:
    em = tinymodel.load(Path(args.model).read_bytes())
    rng = np.random.default_rng(args.seed or 0)
    x = rng.standard_normal(em.n_features).astype(np.float32)
    for _ in range(300):
        em.infer(x)
    n = args.iterations
    t0 = time.perf_counter()
    for _ in range(n):
        em.infer(x)
    per = (time.perf_counter() - t0) / n * 1e6
    doc = {
        "n_trees": em.n_trees,
        "max_depth": em.max_depth,
        "artifact_bytes": em.artifact_size,
        "single_row_us": round(per, 2),
        "iterations": n,
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


# -- services ----------------------------------------------------------------

def cmd_broker(args) -> int:
    from .mqttplane import BrokerServer

    server = BrokerServer(host=args.host, port=args.port).start()
    print(f"mqtt broker listening on {args.host}:{server.port}")
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        server.stop()
    return 0


def cmd_server(args) -> int:
    from .edgeserver import IngestService, Store, StreamHub, make_app, serve_in_thread
    from .mqttplane import Client

    store = Store(args.data)
    mqtt = Client("edgeserver", host=args.broker_host, port=args.broker_port)
    ingest = IngestService(mqtt, store).start()
    app = make_app(store, ingest, StreamHub(), static_dir=args.static, auth_token=args.token)
    server, thread, port = serve_in_thread(app, host=args.host, port=args.port)
    print(f"edge server on http://{args.host}:{port} "
          f"(broker {args.broker_host}:{args.broker_port}, data {args.data})")
    try:
        while thread.is_alive():
            time.sleep(1)
    except KeyboardInterrupt:
        server.should_exit = True
        ingest.stop()
    return 0


def cmd_node(args) -> int:
    cfg = edgenode.NodeConfig.load(args.config) if args.config else edgenode.NodeConfig()
    if args.model:
        cfg = edgenode.NodeConfig.from_dict({**cfg.to_dict(), "model_path": args.model})
    if args.source.startswith("replay:"):
        source = edgenode.ReplaySource(args.source.split(":", 1)[1], speed=args.speed)
    elif args.source == "sim":
        scenario = (fieldsim.ScenarioConfig.from_json(Path(args.scenario).read_text())
                    if args.scenario else fieldsim.ScenarioConfig())
        sim = fieldsim.Simulation(scenario, seed=args.seed or 0)
        n = int(scenario.duration_days * 86400_000 / cfg.sample_period_ms)
        source = edgenode.SimulatedSource(sim, cfg.sample_period_ms, n_samples=n)
    else:
        raise ContractViolation(f"unknown source {args.source!r} (use replay:PATH or sim)")
    mqtt = None
    if args.broker != "none":
        mqtt = edgenode.make_node_client(cfg, host=args.broker_host, port=args.broker_port)
    summary = edgenode.run_loop(source, cfg, mqtt=mqtt, log_sink=lambda line: print(line))
    print(f"-- {summary.n_samples} samples, {summary.n_decisions} decisions, "
          f"{summary.total_ml:.1f} ml dispensed")
    return 0


# -- closed-loop demo -----------------------------------------------------------

def _trace_report(name: str, events, trace, scenario: fieldsim.ScenarioConfig):
    in_band = sum(1 for _, soil in trace
                  if scenario.band_low_adc <= soil <= scenario.band_high_adc)
    per_day: dict[int, dict] = {}
    for t_s, soil in trace:
        acc = per_day.setdefault(int(t_s // 86400), {"in_band": 0, "steps": 0,
                                                     "total_ml": 0.0, "events": 0})
        acc["steps"] += 1
        acc["in_band"] += scenario.band_low_adc <= soil <= scenario.band_high_adc
    for e in events:
        if e.dispensed_ml > 0:
            acc = per_day.get(int(e.ts_ms / 1000 // 86400))
            if acc:
                acc["total_ml"] += e.dispensed_ml
                acc["events"] += 1
    return fieldsim.WaterReport(
        policy=name,
        total_ml=round(sum(e.dispensed_ml for e in events), 3),
        n_events=sum(1 for e in events if e.dispensed_ml > 0),
        time_in_band_pct=round(100.0 * in_band / max(len(trace), 1), 2),
        mean_soil_adc=round(sum(s for _, s in trace) / max(len(trace), 1), 1),
        per_day=[
            {"day": d, "total_ml": round(a["total_ml"], 3), "events": a["events"],
             "time_in_band_pct": round(100.0 * a["in_band"] / a["steps"], 2)}
            for d, a in sorted(per_day.items())
        ],
    )


class _TracingSource(edgenode.SimulatedSource):
    """Simulated source that also records the true soil trajectory."""

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.trace = []

    def samples(self):
        for sample in super().samples():
            self.trace.append((self.sim.state.t_s, self.sim.state.soil_adc))
            yield sample


def _check(name: str, ok: bool, detail: str = "") -> None:
    print(f"check {name}: {'ok' if ok else 'FAILED'} {detail}".rstrip())
    if not ok:
        raise ContractViolation(f"invariant check failed: {name} {detail}")


def cmd_simulate(args) -> int:
    seed = args.seed if args.seed is not None else 7
    scenario = (fieldsim.ScenarioConfig.from_json(Path(args.scenario).read_text())
                if args.scenario else fieldsim.ScenarioConfig(duration_days=args.days))
    if scenario.duration_days != args.days:
        from dataclasses import replace

        scenario = replace(scenario, duration_days=args.days)
    out = _out_dir(args)

    if args.policy == "timer":
        timer = fieldsim.TimerPolicy()
        report, _ = fieldsim.run_experiment(timer, fieldsim.TimerPolicy(), scenario, seed=seed)
        _write_json(out / "report_timer.json", report.to_dict())
        (out / "report_timer.csv").write_text("\n".join(fieldsim.report_csv_rows([report])) + "\n")
        print(f"timer policy: {report.total_ml} ml, {report.n_events} events, "
              f"band {report.time_in_band_pct}%")
        return 0

    # model/rule policies run the full stack: broker + edge server + node loop
    if not args.model and args.policy == "model":
        raise ContractViolation("simulate --policy model requires --model artifact")
    node_cfg = edgenode.NodeConfig(
        node_id="sim1", mode=args.policy, sample_period_ms=int(scenario.dt_s * 1000),
        model_path=args.model,
    )
    sim = fieldsim.Simulation(scenario, seed=seed)
    n_samples = int(scenario.duration_days * 86400 / scenario.dt_s)
    source = _TracingSource(sim, node_cfg.sample_period_ms, n_samples=n_samples,
                            sensor_noise_sd=4.0, noise_seed=seed + 1)

    broker_server = store = ingest = http_server = None
    mqtt = None
    if args.broker != "none":
        from .edgeserver import IngestService, Store, StreamHub, make_app, serve_in_thread
        from .mqttplane import BrokerServer, BrokerLimits, Client

        broker_server = BrokerServer(port=0, limits=BrokerLimits(retry_interval_s=0.5)).start()
        store = Store(out / "data")
        server_client = Client("edgeserver", port=broker_server.port, keep_alive=10,
                               retry_interval_s=0.5)
        ingest = IngestService(server_client, store).start()
        server_client.wait_connected(5)
        app = make_app(store, ingest, StreamHub())
        http_server, http_thread, http_port = serve_in_thread(app, port=0)
        print(f"in-process stack: broker :{broker_server.port}, http :{http_port}")
        mqtt = edgenode.make_node_client(node_cfg, port=broker_server.port,
                                         keep_alive=10, retry_interval_s=0.5)

    summary = edgenode.run_loop(source, node_cfg, mqtt=mqtt)
    (out / "transcript.log").write_text(summary.transcript)
    report = _trace_report(args.policy, summary.events, source.trace, scenario)
    _write_json(out / f"report_{args.policy}.json", report.to_dict())
    (out / f"report_{args.policy}.csv").write_text(
        "\n".join(fieldsim.report_csv_rows([report])) + "\n")

    _check("liveness_decisions", summary.n_decisions > 0,
           f"({summary.n_decisions} decisions)")
    _check("mass_balance",
           abs(report.total_ml - sum(e.dispensed_ml for e in summary.events)) < 1e-6,
           f"({report.total_ml} ml)")
    if store is not None:
        deadline = time.monotonic() + 10
        while time.monotonic() < deadline and store.records_written < summary.n_samples:
            time.sleep(0.1)
        telemetry = store.query("sim1", 0, None, kinds=("telemetry",), limit=10_000)
        events = store.query("sim1", 0, None, kinds=("event",), limit=10_000)
        _check("telemetry_persisted", len(telemetry) > 0, f"({len(telemetry)} records)")
        fired = sum(1 for e in summary.events if e.dispensed_ml > 0)
        distinct = {(r["ts"], r["payload"].get("predicted_ml")) for r in events}
        _check("events_persisted", len(distinct) == len(summary.events),
               f"({len(distinct)} of {len(summary.events)})")
        _check("event_water_total",
               abs(sum(r["payload"]["dispensed_ml"] for r in events if not r.get("duplicate"))
                   - summary.total_ml) < 1e-6)
        http_server.should_exit = True
        ingest.stop()
        broker_server.stop()

    print(f"{args.policy} policy: {report.total_ml} ml, {report.n_events} events, "
          f"band {report.time_in_band_pct}%, mean soil {report.mean_soil_adc}")
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgefarm",
                                description="local-first precision irrigation stack")
    p.add_argument("--seed", type=int, default=None, help="global deterministic seed")
    p.add_argument("--config", default=None, help="config JSON for the subcommand")
    p.add_argument("--out", default=None, help="output directory or file")
    # the same globals are accepted after the subcommand; SUPPRESS keeps the
    # subparser from clobbering values parsed at the top level
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    s = add("synth", help="generate the synthetic dataset")
    s.add_argument("--n", type=int, default=None)
    s.set_defaults(fn=cmd_synth)

    s = add("train", help="train a model and export a .tml1 artifact")
    s.add_argument("--data", required=True)
    s.add_argument("--kind", choices=("rf", "gb"), default="gb")
    s.add_argument("--quantize", choices=("f16", "i16"), default=None)
    s.set_defaults(fn=cmd_train)

    s = add("eval", help="evaluate a .tml1 artifact on a CSV")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.set_defaults(fn=cmd_eval)

    s = add("compare", help="train RF and GB and compare them")
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--hp", nargs="*", default=None,
                   help="overrides like rf.n_estimators=10 gb.subsample=1.0")
    s.add_argument("--learning-curve", action="store_true")
    s.set_defaults(fn=cmd_compare)

    s = add("export-model", help="re-encode or quantize an artifact")
    s.add_argument("--model", required=True)
    s.add_argument("--quantize", choices=("f16", "i16"), default=None)
    s.set_defaults(fn=cmd_export_model)

    s = add("inspect-model", help="print artifact header and node counts")
    s.add_argument("--model", required=True)
    s.set_defaults(fn=cmd_inspect_model)

    s = add("infer", help="single prediction from comma-separated inputs")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.set_defaults(fn=cmd_infer)

    s = add("bench", help="micro-benchmark single-row inference")
    s.add_argument("--model", required=True)
    s.add_argument("--iterations", type=int, default=5000)
    s.set_defaults(fn=cmd_bench)

    s = add("broker", help="run the MQTT broker")
    s.add_argument("--host", default="0.0.0.0")
    s.add_argument("--port", type=int, default=1883)
    s.set_defaults(fn=cmd_broker)

    s = add("server", help="run the edge server (ingest + HTTP API)")
    s.add_argument("--host", default="0.0.0.0")
    s.add_argument("--port", type=int, default=8080)
    s.add_argument("--broker-host", default="127.0.0.1")
    s.add_argument("--broker-port", type=int, default=1883)
    s.add_argument("--data", default="data")
    s.add_argument("--static", default=None, help="dashboard asset directory")
    s.add_argument("--token", default=None, help="optional shared auth token")
    s.set_defaults(fn=cmd_server)

    s = add("node", help="run the edge node control loop")
    s.add_argument("--source", required=True, help="replay:PATH or sim")
    s.add_argument("--speed", type=float, default=0.0, help="replay pacing factor")
    s.add_argument("--model", default=None, help=".tml1 artifact path")
    s.add_argument("--scenario", default=None, help="scenario JSON for sim source")
    s.add_argument("--broker", default="tcp", help="'none' for offline operation")
    s.add_argument("--broker-host", default="127.0.0.1")
    s.add_argument("--broker-port", type=int, default=1883)
    s.set_defaults(fn=cmd_node)

    s = add("simulate", help="closed-loop policy experiment / full-stack demo")
    s.add_argument("--policy", choices=("model", "rule", "timer"), default="model")
    s.add_argument("--days", type=float, default=14.0)
    s.add_argument("--model", default=None, help=".tml1 artifact for the model policy")
    s.add_argument("--scenario", default=None, help="scenario config JSON")
    s.add_argument("--broker", default="tcp", help="'none' runs the node offline")
    s.set_defaults(fn=cmd_simulate)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # argparse puts globals before the subcommand; --config may arrive via
    # either position
    try:
        return args.fn(args)
    except ContractViolation as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, tinymodel.TinyModelError,
            synthdata.CsvFormatError, edgenode.SourceFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
