"""The microcontroller-role runtime: sample, smooth, infer, water, report.

The control loop is sample-timestamp driven: sources carry time, so the
same stream replays to the same decisions with or without a broker (the
data plane affects reporting only, never control). Every window_len
samples the loop makes one irrigation decision, logging the same line
grammar the device firmware prints:

    [Sample] Soil: 3723 (122% dry) Temp: 24.9°C Hum: 45.8%
    [Model Inputs] Soil: 1.0101 Temp: 0.4263 Hum: 0.4582 Time: [0.0000,1.0000] Interactions: [0.4306, 0.4628, 0.1953]
    [Prediction] 14.99 ml needed
    [Action] Watering 15.0 ml (3570 ms)
    [Action] Watering complete

Commands and retained config arriving over MQTT apply between decision
cycles, never mid-decision.
"""

from __future__ import annotations

import json
import re
import threading
import time as _time
from collections import deque
from dataclasses import dataclass, field

from . import fieldsim
from .mqttplane import topics as mqtt_topics
from .mqttplane.client import Client
from .mqttplane.codec import Publish
from .telemetry import (
    CalibrationProfile,
    SensorSample,
    SmoothingState,
    dryness_pct,
    normalize,
)

__all__ = [
    "NodeConfig",
    "PumpModel",
    "IrrigationEvent",
    "NodeState",
    "decide",
    "run_loop",
    "LoopSummary",
    "ScriptedSource",
    "ReplaySource",
    "SimulatedSource",
    "NodePolicy",
    "make_node_client",
    "parse_transcript",
]


@dataclass(frozen=True)
class NodeConfig:
    node_id: str = "n1"
    sample_period_ms: int = 2000
    window_len: int = 14
    ema_alpha: float = 0.25
    calibration: CalibrationProfile = field(default_factory=CalibrationProfile)
    min_ml: float = 1.0
    max_ml: float = 500.0
    cooldown_s: float = 600.0
    pump_ms_per_ml: float = 238.0
    model_path: str | None = None
    mode: str = "model"  # "model" | "rule"
    rule_dose_ml: float = 15.0
    time_feature_mode: str = "fixed"  # "fixed" -> [0, 1]; "clock" -> real time of day

    def __post_init__(self) -> None:
        mqtt_topics.validate_node_id(self.node_id)
        if not self.min_ml < self.max_ml:
            raise ValueError("min_ml must be < max_ml")
        if self.pump_ms_per_ml <= 0:
            raise ValueError("pump_ms_per_ml must be > 0")
        if self.window_len < 1:
            raise ValueError("window_len must be >= 1")
        if self.mode not in ("model", "rule"):
            raise ValueError(f"mode must be 'model' or 'rule', got {self.mode!r}")
        if self.time_feature_mode not in ("fixed", "clock"):
            raise ValueError("time_feature_mode must be 'fixed' or 'clock'")

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "sample_period_ms": self.sample_period_ms,
            "window_len": self.window_len,
            "ema_alpha": self.ema_alpha,
            "calibration": self.calibration.to_dict(),
            "min_ml": self.min_ml,
            "max_ml": self.max_ml,
            "cooldown_s": self.cooldown_s,
            "pump_ms_per_ml": self.pump_ms_per_ml,
            "model_path": self.model_path,
            "mode": self.mode,
            "rule_dose_ml": self.rule_dose_ml,
            "time_feature_mode": self.time_feature_mode,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NodeConfig":
        doc = dict(doc)
        cal = doc.pop("calibration", None)
        kwargs = {k: doc[k] for k in cls().to_dict() if k in doc and k != "calibration"}
        if cal is not None:
            kwargs["calibration"] = CalibrationProfile.from_dict(cal)
        return cls(**kwargs)

    def with_update(self, update: dict) -> "NodeConfig":
        """Apply a (validated) config payload; unknown keys are ignored."""
        merged = self.to_dict()
        for k, v in update.items():
            if k in merged and k != "node_id":
                merged[k] = v
        return NodeConfig.from_dict(merged)

    @classmethod
    def load(cls, path) -> "NodeConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")


@dataclass
class PumpModel:
    """Relay-and-pump stand-in: converts milliliters to run time."""

    ms_per_ml: float = 238.0
    state: str = "idle"
    total_ml: float = 0.0
    total_runs: int = 0

    def duration_for(self, ml: float) -> int:
        return int(round(ml * self.ms_per_ml))

    def run(self, ml: float) -> int:
        duration = self.duration_for(ml)
        self.state = "running"
        self.total_ml += ml
        self.total_runs += 1
        self.state = "idle"
        return duration


@dataclass(frozen=True)
class IrrigationEvent:
    ts_ms: int
    predicted_ml: float
    dispensed_ml: float
    duration_ms: int
    trigger: str  # model | rule | manual
    skipped_reason: str | None = None  # in_water | below_min | cooldown | paused

    def __post_init__(self) -> None:
        if (self.dispensed_ml == 0.0) != (self.skipped_reason is not None):
            raise ValueError("dispensed_ml must be 0 exactly when skipped_reason is set")

    def to_payload(self, node_id: str) -> dict:
        doc = {
            "ts": self.ts_ms,
            "node": node_id,
            "predicted_ml": self.predicted_ml,
            "dispensed_ml": self.dispensed_ml,
            "duration_ms": self.duration_ms,
            "trigger": self.trigger,
        }
        if self.skipped_reason:
            doc["skipped_reason"] = self.skipped_reason
        return doc


@dataclass
class NodeState:
    paused: bool = False
    last_watered_ms: int | None = None
    model_fault: bool = False


def _seconds_of_day(cfg: NodeConfig, now_ms: int) -> float:
    if cfg.time_feature_mode == "clock":
        return (now_ms / 1000.0) % 86400.0
    return 0.0  # fixed encoding: sin 0, cos 1


def decide(
    smoothed: SensorSample,
    model,
    cfg: NodeConfig,
    now_ms: int,
    state: NodeState,
    manual_ml: float | None = None,
) -> IrrigationEvent:
    """One irrigation decision on a smoothed window.

    Guard order: standing water beats everything; then pause and cooldown;
    then the model (or rule) proposes a volume, clamped to [0, max_ml] and
    dropped when under min_ml. A fired decision starts the cooldown.
    """
    cal = cfg.calibration
    trigger = "manual" if manual_ml is not None else cfg.mode

    def skip(reason, predicted=0.0, trig=None):
        return IrrigationEvent(
            ts_ms=now_ms, predicted_ml=round(float(predicted), 4), dispensed_ml=0.0,
            duration_ms=0, trigger=trig or trigger, skipped_reason=reason,
        )

    if smoothed.soil_adc < cal.water_level_adc:
        return skip("in_water")
    if state.paused:
        return skip("paused")
    if (
        state.last_watered_ms is not None
        and now_ms - state.last_watered_ms < cfg.cooldown_s * 1000.0
    ):
        return skip("cooldown")

    if manual_ml is not None:
        predicted = float(manual_ml)
    elif cfg.mode == "model" and model is not None:
        if getattr(model, "n_features", 8) != 8:
            state.model_fault = True
            trigger = "rule"
            predicted = cfg.rule_dose_ml if smoothed.soil_adc >= cal.dry_low_adc else 0.0
        else:
            vec = normalize(smoothed, cal, _seconds_of_day(cfg, now_ms))
            predicted = float(model.infer(vec.as_array()))
    else:
        trigger = "rule"
        if smoothed.soil_adc >= cal.dry_low_adc:
            predicted = cfg.rule_dose_ml
        else:
            # wet or gray zone: rule mode only waters past the dry threshold
            predicted = 0.0

    ml = min(max(predicted, 0.0), cfg.max_ml)
    if ml < cfg.min_ml:
        return skip("below_min", predicted=min(max(predicted, 0.0), cfg.max_ml), trig=trigger)
    dispensed = round(ml, 1)
    duration = int(round(dispensed * cfg.pump_ms_per_ml))
    state.last_watered_ms = now_ms
    return IrrigationEvent(
        ts_ms=now_ms,
        predicted_ml=round(float(predicted), 4),
        dispensed_ml=dispensed,
        duration_ms=duration,
        trigger=trigger,
    )


# -- log line grammar ----------------------------------------------------

def format_sample_line(sample: SensorSample, cal: CalibrationProfile) -> str:
    return (
        f"[Sample] Soil: {int(round(sample.soil_adc))} ({dryness_pct(sample.soil_adc, cal)}% dry) "
        f"Temp: {sample.temp_c:.1f}°C Hum: {sample.hum_pct:.1f}%"
    )


def format_inputs_line(vec) -> str:
    return (
        f"[Model Inputs] Soil: {vec.soil_n:.4f} Temp: {vec.temp_n:.4f} Hum: {vec.hum_n:.4f} "
        f"Time: [{vec.time_sin:.4f},{vec.time_cos:.4f}] "
        f"Interactions: [{vec.inter_soil_temp:.4f}, {vec.inter_soil_hum:.4f}, {vec.inter_temp_hum:.4f}]"
    )


def format_prediction_line(ml: float) -> str:
    return f"[Prediction] {ml:.2f} ml needed"


IN_WATER_LINE = "[Prediction] Soil in water, no watering needed (0.00 ml)"
ACTION_NONE = "[Action] No watering needed"
ACTION_COMPLETE = "[Action] Watering complete"


def format_action_watering(ml: float, duration_ms: int) -> str:
    return f"[Action] Watering {ml:.1f} ml ({duration_ms} ms)"


_SAMPLE_RE = re.compile(
    r"\[Sample\] Soil: (-?\d+) \((-?\d+)% dry\) Temp: ([\d.]+)°C Hum: ([\d.]+)%"
)
_PREDICT_RE = re.compile(r"\[Prediction\] ([\d.]+) ml needed")
_WATER_RE = re.compile(r"\[Action\] Watering ([\d.]+) ml \((\d+) ms\)")


def parse_transcript(text: str) -> list[dict]:
    """Reconstruct decisions from a node transcript.

    Each decision dict carries the window's samples, the normalized inputs
    line (verbatim), the predicted ml, and the actuation outcome
    (dispensed_ml, duration_ms) or the skip kind.
    """
    decisions: list[dict] = []
    cur: dict = {"samples": [], "inputs_line": None, "predicted_ml": None,
                 "in_water": False, "dispensed_ml": 0.0, "duration_ms": 0, "skipped": None}

    def flush():
        nonlocal cur
        decisions.append(cur)
        cur = {"samples": [], "inputs_line": None, "predicted_ml": None,
               "in_water": False, "dispensed_ml": 0.0, "duration_ms": 0, "skipped": None}

    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        m = _SAMPLE_RE.match(line)
        if m:
            cur["samples"].append(
                {"soil": int(m.group(1)), "dryness": int(m.group(2)),
                 "temp": float(m.group(3)), "hum": float(m.group(4))}
            )
            continue
        if line.startswith("[Model Inputs]"):
            cur["inputs_line"] = line
            continue
        if line == IN_WATER_LINE:
            cur["in_water"] = True
            cur["skipped"] = "in_water"
            continue
        m = _PREDICT_RE.match(line)
        if m:
            cur["predicted_ml"] = float(m.group(1))
            continue
        m = _WATER_RE.match(line)
        if m:
            cur["dispensed_ml"] = float(m.group(1))
            cur["duration_ms"] = int(m.group(2))
            continue
        if line == ACTION_COMPLETE:
            flush()
            continue
        if line == ACTION_NONE:
            if cur["skipped"] is None:
                cur["skipped"] = "no_need"
            flush()
            continue
    return decisions


# -- sensor sources --------------------------------------------------------

class SourceFormatError(ValueError):
    pass


class ScriptedSource:
    """Fixed list of samples, for tests."""

    def __init__(self, samples):
        self._samples = list(samples)

    def samples(self):
        yield from self._samples


class ReplaySource:
    """CSV replay: header ts_ms,soil_adc,temp_c,hum_pct,light_lux[,ph].

    speed > 0 paces playback against the wall clock, scaled by that
    factor; speed = 0 replays as fast as possible.
    """

    HEADER5 = "ts_ms,soil_adc,temp_c,hum_pct,light_lux"
    HEADER6 = HEADER5 + ",ph"

    def __init__(self, path, speed: float = 0.0):
        self.path = path
        self.speed = speed

    def samples(self):
        with open(self.path, "r", encoding="utf-8") as f:
            header = f.readline().rstrip("\n")
            if header == self.HEADER6:
                arity = 6
            elif header == self.HEADER5:
                arity = 5
            else:
                raise SourceFormatError(f"line 1: unrecognized replay header {header!r}")
            prev_ts = None
            for lineno, line in enumerate(f, start=2):
                line = line.rstrip("\n")
                if not line:
                    continue
                cells = line.split(",")
                if len(cells) != arity:
                    raise SourceFormatError(f"line {lineno}: expected {arity} fields")
                try:
                    vals = [float(c) for c in cells]
                except ValueError:
                    raise SourceFormatError(f"line {lineno}: non-numeric cell") from None
                sample = SensorSample(
                    ts_ms=int(vals[0]), soil_adc=vals[1], temp_c=vals[2],
                    hum_pct=vals[3], light_lux=vals[4],
                    ph=vals[5] if arity == 6 else None,
                )
                if self.speed > 0 and prev_ts is not None:
                    _time.sleep(max(0.0, (sample.ts_ms - prev_ts) / 1000.0 / self.speed))
                prev_ts = sample.ts_ms
                yield sample


class SimulatedSource:
    """Samples drawn from a running field simulation, with sensor noise.

    Dispensed water is fed back into the simulation, closing the loop.
    """

    def __init__(self, sim: fieldsim.Simulation, sample_period_ms: int = 2000,
                 n_samples: int | None = None, sensor_noise_sd: float = 4.0,
                 noise_seed: int = 1):
        self.sim = sim
        self.sample_period_ms = sample_period_ms
        self.n_samples = n_samples
        self.sensor_noise_sd = sensor_noise_sd
        self._noise_seed = noise_seed

    def apply_dispense(self, ml: float) -> None:
        self.sim.dispense(ml)

    def samples(self):
        import numpy as np

        rng = np.random.default_rng(self._noise_seed)
        produced = 0
        while self.n_samples is None or produced < self.n_samples:
            state, w = self.sim.advance(dt_s=self.sample_period_ms / 1000.0)
            soil = min(max(state.soil_adc + rng.normal(0, self.sensor_noise_sd), 0.0), 4095.0)
            yield SensorSample(
                ts_ms=int(round(state.t_s * 1000)), soil_adc=soil,
                temp_c=w[0], hum_pct=w[1], light_lux=w[2],
            )
            produced += 1


# -- the control loop ------------------------------------------------------

@dataclass
class LoopSummary:
    n_samples: int = 0
    n_decisions: int = 0
    events: list = field(default_factory=list)
    total_ml: float = 0.0
    transcript: str = ""

    def decision_tuples(self):
        """Comparable essence of the decision sequence (reporting-independent)."""
        return [
            (e.ts_ms, e.predicted_ml, e.dispensed_ml, e.duration_ms, e.trigger, e.skipped_reason)
            for e in self.events
        ]


def make_node_client(cfg: NodeConfig, host: str = "127.0.0.1", port: int = 1883,
                     connect_fn=None, **kw) -> Client:
    """Client preconfigured with the node's identity and offline last-will."""
    will = Publish(
        topic=mqtt_topics.status_topic(cfg.node_id),
        payload=json.dumps({"node": cfg.node_id, "online": False}).encode(),
        qos=1,
        retain=True,
    )
    kw.setdefault("keep_alive", 15)
    return Client(f"node-{cfg.node_id}", host=host, port=port, connect_fn=connect_fn,
                  will=will, clean_session=False, **kw)


def run_loop(
    source,
    cfg: NodeConfig,
    mqtt: Client | None = None,
    model=None,
    log_sink=None,
    max_decisions: int | None = None,
    connect_wait_s: float = 5.0,
    settle_s: float = 0.25,
) -> LoopSummary:
    """Drive the node until the source is exhausted (or max_decisions).

    Fully functional without a broker: mqtt carries reporting and inbound
    commands only. Inbound cmd/config messages apply between decision
    cycles.
    """
    if model is None and cfg.model_path:
        from .tinymodel import load

        with open(cfg.model_path, "rb") as f:
            model = load(f.read())

    pump = PumpModel(ms_per_ml=cfg.pump_ms_per_ml)
    state = NodeState()
    smoothing = SmoothingState(window_len=cfg.window_len, ema_alpha=cfg.ema_alpha)
    summary = LoopSummary()
    lines: list[str] = []
    inbox: deque = deque()
    inbox_lock = threading.Lock()

    def log(line: str) -> None:
        lines.append(line)
        if log_sink is not None:
            log_sink(line)

    def on_message(topic, payload, qos, retain, dup):
        kind = mqtt_topics.parse_farm_topic(topic)
        if kind is None or kind[0] != cfg.node_id:
            return
        with inbox_lock:
            inbox.append((kind[1], payload))

    if mqtt is not None:
        mqtt.on_message = on_message
        mqtt.subscribe(mqtt_topics.cmd_topic(cfg.node_id), qos=1)
        mqtt.subscribe(mqtt_topics.config_topic(cfg.node_id), qos=1)
        mqtt.start()
        # boot-time sync: join the LAN if it is there and let retained
        # config/commands land before the first decision; if the broker is
        # unreachable the loop simply runs autonomously
        if mqtt.wait_connected(timeout=connect_wait_s):
            mqtt.wait_subscriptions(timeout=2.0)
            _time.sleep(settle_s)
        mqtt.publish(
            mqtt_topics.status_topic(cfg.node_id),
            json.dumps({"node": cfg.node_id, "online": True}).encode(),
            qos=1,
            retain=True,
        )

    def publish_event(event: IrrigationEvent) -> None:
        if mqtt is not None:
            mqtt.publish(
                mqtt_topics.event_topic(cfg.node_id),
                json.dumps(event.to_payload(cfg.node_id)).encode(),
                qos=1,
            )

    def record(event: IrrigationEvent) -> None:
        summary.events.append(event)
        summary.total_ml += event.dispensed_ml
        publish_event(event)

    def drain_inbox(now_ms: int, smoothed: SensorSample | None):
        nonlocal cfg
        while True:
            with inbox_lock:
                if not inbox:
                    return
                kind, payload = inbox.popleft()
            try:
                if kind == "cmd":
                    doc = mqtt_topics.validate_cmd(payload)
                    if doc["type"] == "pause":
                        state.paused = True
                    elif doc["type"] == "resume":
                        state.paused = False
                    elif doc["type"] == "irrigate_now" and smoothed is not None:
                        event = decide(smoothed, model, cfg, now_ms, state,
                                       manual_ml=float(doc.get("ml", cfg.rule_dose_ml)))
                        if event.dispensed_ml > 0:
                            pump.run(event.dispensed_ml)
                            log(format_action_watering(event.dispensed_ml, event.duration_ms))
                            log(ACTION_COMPLETE)
                        else:
                            log(ACTION_NONE)
                        record(event)
                elif kind == "config":
                    doc = mqtt_topics.validate_config_update(payload)
                    cfg = cfg.with_update(doc)
                    smoothing.window_len = cfg.window_len
                    smoothing.ema_alpha = cfg.ema_alpha
            except (mqtt_topics.PayloadError, ValueError):
                continue  # malformed control traffic never crashes the loop

    n_in_window = 0
    smoothed: SensorSample | None = None
    for raw in source.samples():
        now_ms = raw.ts_ms
        smoothed = smooth_into(smoothing, raw)
        summary.n_samples += 1
        n_in_window += 1
        log(format_sample_line(raw, cfg.calibration))

        if mqtt is not None:
            vec = normalize(smoothed, cfg.calibration, _seconds_of_day(cfg, now_ms))
            telemetry = {
                "ts": now_ms,
                "node": cfg.node_id,
                "soil_adc": round(raw.soil_adc, 1),
                "soil_n": round(vec.soil_n, 4),
                "dryness_pct": dryness_pct(raw.soil_adc, cfg.calibration),
                "temp_c": round(raw.temp_c, 2),
                "hum_pct": round(raw.hum_pct, 2),
                "light_lux": round(raw.light_lux, 1),
                "ph": round(raw.ph, 2) if raw.ph is not None else None,
            }
            mqtt.publish(
                mqtt_topics.telemetry_topic(cfg.node_id),
                json.dumps(telemetry).encode(),
                qos=0,
            )

        if n_in_window >= cfg.window_len:
            drain_inbox(now_ms, smoothed)
            event = decide(smoothed, model, cfg, now_ms, state)
            summary.n_decisions += 1
            if event.skipped_reason == "in_water":
                log(IN_WATER_LINE)
                log(ACTION_NONE)
            else:
                if event.trigger == "model" and cfg.mode == "model" and model is not None:
                    vec = normalize(smoothed, cfg.calibration, _seconds_of_day(cfg, now_ms))
                    log(format_inputs_line(vec))
                log(format_prediction_line(event.predicted_ml))
                if event.dispensed_ml > 0:
                    pump.run(event.dispensed_ml)
                    log(format_action_watering(event.dispensed_ml, event.duration_ms))
                    log(ACTION_COMPLETE)
                else:
                    log(ACTION_NONE)
            record(event)
            if event.dispensed_ml > 0 and hasattr(source, "apply_dispense"):
                source.apply_dispense(event.dispensed_ml)
            smoothing.reset()
            n_in_window = 0
            if max_decisions is not None and summary.n_decisions >= max_decisions:
                break

    if mqtt is not None:
        mqtt.publish(
            mqtt_topics.status_topic(cfg.node_id),
            json.dumps({"node": cfg.node_id, "online": False, "graceful": True}).encode(),
            qos=1,
            retain=True,
        )
        mqtt.flush(5.0)
        mqtt.stop()

    summary.transcript = "\n".join(lines) + ("\n" if lines else "")
    return summary


def smooth_into(state: SmoothingState, sample: SensorSample) -> SensorSample:
    from .telemetry import smooth

    return smooth(state, sample)


class NodePolicy:
    """Adapts the node's windowed decision pipeline to the simulator's
    one-callback-per-step protocol, for policy experiments."""

    def __init__(self, cfg: NodeConfig, model=None):
        self.name = cfg.mode
        self.cfg = cfg
        self.model = model
        self.state = NodeState()
        self.smoothing = SmoothingState(window_len=cfg.window_len, ema_alpha=cfg.ema_alpha)
        self.events: list[IrrigationEvent] = []
        self._n = 0

    def observe(self, sample: SensorSample) -> float:
        from .telemetry import smooth

        smoothed = smooth(self.smoothing, sample)
        self._n += 1
        if self._n < self.cfg.window_len:
            return 0.0
        self._n = 0
        self.smoothing.reset()
        event = decide(smoothed, self.model, self.cfg, sample.ts_ms, self.state)
        self.events.append(event)
        return event.dispensed_ml
