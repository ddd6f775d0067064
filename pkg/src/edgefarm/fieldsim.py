"""Discrete-time soil/plant/atmosphere simulator for closed-loop experiments.

Drying raises the soil ADC reading (drier = higher); watering lowers it
linearly. Evaporation scales with temperature and light and is damped by
humidity. Weather is a diurnal sinusoid family with seeded per-step
noise, clipped to the sensor ranges, so a (seed, config) pair fully
determines a run. The committed default climate is mild and humid: under
it a fixed 6-hour timer oversupplies, which is exactly the regime where
demand-following control shows its savings.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = [
    "FieldState",
    "ScenarioConfig",
    "WaterReport",
    "weather",
    "evap_rate",
    "step",
    "Simulation",
    "TimerPolicy",
    "run_experiment",
    "report_csv_rows",
]

SOIL_MIN = 400.0
SOIL_MAX = 4095.0
DAY_S = 86400.0


@dataclass(frozen=True)
class FieldState:
    soil_adc: float
    t_s: float


@dataclass(frozen=True)
class ScenarioConfig:
    duration_days: float = 14.0
    dt_s: float = 60.0
    evap_base: float = 18.0  # counts/hour at 20 C, darkness, bone-dry air
    evap_temp_gain: float = 0.8
    evap_light_gain: float = 0.5
    evap_hum_damp: float = 0.5
    absorb_per_ml: float = 6.0  # counts removed per dispensed ml
    initial_soil_adc: float = 2500.0
    # diurnal climate: temperature and humidity in anti-phase, light a
    # half-sine between 06:00 and 18:00
    temp_min_c: float = 20.0
    temp_max_c: float = 24.0
    hum_min_pct: float = 75.0
    hum_max_pct: float = 95.0
    light_peak_lux: float = 2000.0
    temp_noise_sd: float = 0.15
    hum_noise_sd: float = 0.6
    light_noise_sd: float = 40.0
    band_low_adc: float = 2200.0  # optimal - 300
    band_high_adc: float = 3500.0  # dry threshold

    def __post_init__(self) -> None:
        if self.dt_s <= 0:
            raise ValueError("dt_s must be > 0")
        if self.absorb_per_ml <= 0:
            raise ValueError("absorb_per_ml must be > 0")

    def to_json(self) -> str:
        doc = {"schema_version": 1}
        doc.update(asdict(self))
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        doc = json.loads(text)
        if doc.pop("schema_version", 1) != 1:
            raise ValueError("unsupported scenario schema_version")
        return cls(**doc)


def weather(t_s: float, cfg: ScenarioConfig, seed: int = 0):
    """(temp_c, hum_pct, light_lux) at simulated time t_s.

    Noise is keyed by (seed, step) so the same instant always replays the
    same weather regardless of how the caller iterates.
    """
    day_phase = (t_s % DAY_S) / DAY_S
    # temperature peaks mid-afternoon (15:00), humidity in anti-phase
    swing = math.sin(2.0 * math.pi * (day_phase - 0.375))
    temp = (cfg.temp_min_c + cfg.temp_max_c) / 2 + (cfg.temp_max_c - cfg.temp_min_c) / 2 * swing
    hum = (cfg.hum_min_pct + cfg.hum_max_pct) / 2 - (cfg.hum_max_pct - cfg.hum_min_pct) / 2 * swing
    hour = day_phase * 24.0
    if 6.0 <= hour <= 18.0:
        light = cfg.light_peak_lux * math.sin(math.pi * (hour - 6.0) / 12.0)
    else:
        light = 0.0
    rng = np.random.default_rng([seed, int(t_s)])
    noise = rng.standard_normal(3)
    temp = min(max(temp + cfg.temp_noise_sd * noise[0], 20.0), 35.0)
    hum = min(max(hum + cfg.hum_noise_sd * noise[1], 20.0), 90.0)
    light = min(max(light + cfg.light_noise_sd * noise[2] if light > 0 else 0.0, 0.0), 5000.0)
    return temp, hum, light


def evap_rate(temp_c: float, hum_pct: float, light_lux: float, cfg: ScenarioConfig) -> float:
    """Drying rate in counts/hour."""
    return (
        cfg.evap_base
        * (1.0 + cfg.evap_temp_gain * (temp_c - 20.0) / 15.0)
        * (1.0 + cfg.evap_light_gain * light_lux / 5000.0)
        * (1.0 - cfg.evap_hum_damp * hum_pct / 100.0)
    )


def step(state: FieldState, w, dispensed_ml: float, cfg: ScenarioConfig,
         dt_s: float | None = None) -> FieldState:
    """One explicit-Euler step: drying pushes ADC up, water pulls it down."""
    dt = cfg.dt_s if dt_s is None else dt_s
    temp, hum, light = w
    soil = state.soil_adc + evap_rate(temp, hum, light, cfg) * dt / 3600.0
    soil -= cfg.absorb_per_ml * dispensed_ml
    soil = min(max(soil, SOIL_MIN), SOIL_MAX)
    return FieldState(soil_adc=soil, t_s=state.t_s + dt)


class Simulation:
    """Stateful wrapper used by the node's simulated sensor source."""

    def __init__(self, cfg: ScenarioConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.state = FieldState(soil_adc=cfg.initial_soil_adc, t_s=0.0)
        self._pending_ml = 0.0

    def dispense(self, ml: float) -> None:
        """Water applied by the controller; absorbed on the next step."""
        self._pending_ml += ml

    def advance(self, dt_s: float | None = None):
        """Step once; returns (state, (temp, hum, light)) after the step."""
        w = weather(self.state.t_s, self.cfg, self.seed)
        ml = self._pending_ml
        self._pending_ml = 0.0
        self.state = step(self.state, w, ml, self.cfg, dt_s=dt_s)
        return self.state, w


@dataclass
class WaterReport:
    policy: str
    total_ml: float
    n_events: int
    time_in_band_pct: float
    mean_soil_adc: float
    per_day: list = field(default_factory=list)  # {day, total_ml, events, time_in_band_pct}

    def to_dict(self) -> dict:
        return asdict(self)


class TimerPolicy:
    """Conventional baseline: a fixed dose on a fixed interval, regardless
    of conditions."""

    def __init__(self, dose_ml: float = 15.0, interval_s: float = 21600.0):
        self.name = "timer"
        self.dose_ml = dose_ml
        self.interval_s = interval_s
        self._last: float | None = None

    def observe(self, sample) -> float:
        t_s = sample.ts_ms / 1000.0
        if self._last is None or t_s - self._last >= self.interval_s:
            self._last = t_s
            return self.dose_ml
        return 0.0


def _run_policy(policy, cfg: ScenarioConfig, seed: int) -> WaterReport:
    from .telemetry import SensorSample  # local import keeps module load light

    sim = Simulation(cfg, seed)
    n_steps = int(round(cfg.duration_days * DAY_S / cfg.dt_s))
    total_ml = 0.0
    n_events = 0
    in_band = 0
    soil_sum = 0.0
    day_acc: dict[int, dict] = {}
    for _ in range(n_steps):
        w = weather(sim.state.t_s, cfg, seed)
        sample = SensorSample(
            ts_ms=int(sim.state.t_s * 1000),
            soil_adc=sim.state.soil_adc,
            temp_c=w[0],
            hum_pct=w[1],
            light_lux=w[2],
        )
        ml = float(policy.observe(sample) or 0.0)
        if ml > 0:
            sim.dispense(ml)
            total_ml += ml
            n_events += 1
        day = int(sim.state.t_s // DAY_S)
        acc = day_acc.setdefault(day, {"total_ml": 0.0, "events": 0, "in_band": 0, "steps": 0})
        acc["total_ml"] += ml
        acc["events"] += 1 if ml > 0 else 0
        sim.advance()
        soil_sum += sim.state.soil_adc
        band = cfg.band_low_adc <= sim.state.soil_adc <= cfg.band_high_adc
        in_band += band
        acc["in_band"] += band
        acc["steps"] += 1
    per_day = [
        {
            "day": d,
            "total_ml": round(acc["total_ml"], 3),
            "events": acc["events"],
            "time_in_band_pct": round(100.0 * acc["in_band"] / acc["steps"], 2),
        }
        for d, acc in sorted(day_acc.items())
    ]
    return WaterReport(
        policy=getattr(policy, "name", type(policy).__name__),
        total_ml=round(total_ml, 3),
        n_events=n_events,
        time_in_band_pct=round(100.0 * in_band / n_steps, 2),
        mean_soil_adc=round(soil_sum / n_steps, 1),
        per_day=per_day,
    )


def run_experiment(policy_a, policy_b, cfg: ScenarioConfig | None = None, seed: int = 0):
    """Run two policies against the identical weather stream and report
    water usage and moisture-band compliance for each."""
    cfg = cfg or ScenarioConfig()
    return _run_policy(policy_a, cfg, seed), _run_policy(policy_b, cfg, seed)


def report_csv_rows(reports) -> list[str]:
    """Per-day CSV lines: day,policy,total_ml,events,time_in_band_pct."""
    lines = ["day,policy,total_ml,events,time_in_band_pct"]
    for rep in reports:
        for row in rep.per_day:
            lines.append(
                f"{row['day']},{rep.policy},{row['total_ml']},{row['events']},{row['time_in_band_pct']}"
            )
    return lines
