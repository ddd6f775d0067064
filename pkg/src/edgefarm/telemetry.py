"""Sensor domain types, calibration, smoothing, normalization and feature engineering.

Everything the rest of the stack needs to turn raw ADC/DHT readings into
model-ready inputs lives here: the calibrated dryness scale, the EMA
smoother, the 8-input normalized vector used on-device, and the 14-feature
offline representation used for ensemble training.

Soil convention: higher ADC counts mean drier soil (capacitive probe,
0-4095 range).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SensorSample",
    "CalibrationProfile",
    "SmoothingState",
    "EdgeInputVector",
    "FeatureVector14",
    "StressState",
    "ScalerParams",
    "EDGE_INPUT_NAMES",
    "FEATURE_NAMES_14",
    "smooth",
    "dryness_pct",
    "normalize",
    "engineer_features",
    "fit_scaler",
    "standardize",
    "unstandardize",
]

SECONDS_PER_DAY = 86400

EDGE_INPUT_NAMES = (
    "soil_n",
    "temp_n",
    "hum_n",
    "time_sin",
    "time_cos",
    "inter_soil_temp",
    "inter_soil_hum",
    "inter_temp_hum",
)

FEATURE_NAMES_14 = (
    "moisture",
    "light",
    "ph",
    "temperature",
    "humidity",
    "moisture_deficit",
    "stress_index",
    "ph_suitability",
    "moisture_change_rate",
    "cumulative_stress",
    "et_proxy",
    "light_low",
    "light_med",
    "light_high",
)

# Agronomic pH comfort band; configurable at the call site.
PH_SUITABLE_LOW = 5.5
PH_SUITABLE_HIGH = 7.5


@dataclass(frozen=True)
class SensorSample:
    """One timestamped reading of the five environmental channels, raw units.

    soil_adc is integer 0-4095 when raw, real-valued after smoothing.
    ph is optional: deployments without a probe leave it None.
    """

    ts_ms: int
    soil_adc: float
    temp_c: float
    hum_pct: float
    light_lux: float
    ph: float | None = None

    def validate(self) -> None:
        if not (0 <= self.soil_adc <= 4095):
            raise ValueError(f"soil_adc {self.soil_adc} outside [0, 4095]")
        if not (0 <= self.hum_pct <= 100):
            raise ValueError(f"hum_pct {self.hum_pct} outside [0, 100]")
        if self.light_lux < 0:
            raise ValueError(f"light_lux {self.light_lux} negative")
        if self.ph is not None and not (0 <= self.ph <= 14):
            raise ValueError(f"ph {self.ph} outside [0, 14]")


@dataclass(frozen=True)
class CalibrationProfile:
    """ADC landmark constants from probe calibration.

    Landmarks, wettest to driest: submerged-in-water detect level, wet soil
    just after irrigation, the optimal target, the dry-soil trigger, and the
    open-air (fully dry) baseline.
    """

    water_level_adc: float = 1500.0
    wet_high_adc: float = 2900.0
    optimal_adc: float = 2500.0
    dry_low_adc: float = 3500.0
    dry_air_adc: float = 3699.0
    adc_max: float = 4095.0

    def __post_init__(self) -> None:
        if not (
            self.water_level_adc
            < self.optimal_adc
            < self.wet_high_adc
            < self.dry_low_adc
            < self.dry_air_adc
            <= self.adc_max
        ):
            raise ValueError("calibration landmarks out of order")

    def to_dict(self) -> dict:
        return {
            "water_level_adc": self.water_level_adc,
            "wet_high_adc": self.wet_high_adc,
            "optimal_adc": self.optimal_adc,
            "dry_low_adc": self.dry_low_adc,
            "dry_air_adc": self.dry_air_adc,
            "adc_max": self.adc_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationProfile":
        return cls(**{k: float(d[k]) for k in cls().to_dict() if k in d})


@dataclass
class SmoothingState:
    """Per-channel exponential moving average over a sampling window.

    alpha weights the newest reading; feeding a constant series converges to
    (and stays at) that constant. The node resets this state at each window
    boundary so one decision sees exactly window_len samples.
    """

    window_len: int = 14
    ema_alpha: float = 0.25
    soil: float | None = None
    temp: float | None = None
    hum: float | None = None
    light: float | None = None
    ph: float | None = None
    n_seen: int = 0

    def __post_init__(self) -> None:
        if self.window_len < 1:
            raise ValueError("window_len must be >= 1")
        if not (0 < self.ema_alpha <= 1):
            raise ValueError("ema_alpha must be in (0, 1]")

    def reset(self) -> None:
        self.soil = self.temp = self.hum = self.light = self.ph = None
        self.n_seen = 0


def _ema(prev: float | None, x: float, alpha: float) -> float:
    if prev is None:
        return x
    return alpha * x + (1.0 - alpha) * prev


def smooth(state: SmoothingState, sample: SensorSample) -> SensorSample:
    """Fold one sample into the EMA state and return the smoothed sample."""
    a = state.ema_alpha
    state.soil = _ema(state.soil, sample.soil_adc, a)
    state.temp = _ema(state.temp, sample.temp_c, a)
    state.hum = _ema(state.hum, sample.hum_pct, a)
    state.light = _ema(state.light, sample.light_lux, a)
    if sample.ph is not None:
        state.ph = _ema(state.ph, sample.ph, a)
    state.n_seen += 1
    return SensorSample(
        ts_ms=sample.ts_ms,
        soil_adc=state.soil,
        temp_c=state.temp,
        hum_pct=state.hum,
        light_lux=state.light,
        ph=state.ph,
    )


def dryness_pct(soil_adc: float, cal: CalibrationProfile | None = None) -> int:
    """Calibrated dryness percent: 0 at the optimal landmark, 100 at dry-low.

    Truncates toward zero (not rounding): 3723 -> 122, 1351 -> -114 with the
    default calibration.
    """
    cal = cal or CalibrationProfile()
    span = cal.dry_low_adc - cal.optimal_adc
    return int(100.0 * (soil_adc - cal.optimal_adc) / span)


# Temperature normalization constants: best two-point fit to observed device
# logs; the true firmware constants are not recoverable, so they are module
# configuration rather than calibration.
TEMP_NORM_OFFSET = 5.0
TEMP_NORM_SPAN = 70.0


@dataclass(frozen=True)
class EdgeInputVector:
    """The 8 normalized inputs the on-device model consumes."""

    soil_n: float
    temp_n: float
    hum_n: float
    time_sin: float
    time_cos: float
    inter_soil_temp: float
    inter_soil_hum: float
    inter_temp_hum: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.soil_n,
                self.temp_n,
                self.hum_n,
                self.time_sin,
                self.time_cos,
                self.inter_soil_temp,
                self.inter_soil_hum,
                self.inter_temp_hum,
            ],
            dtype=np.float64,
        )


def normalize(
    smoothed: SensorSample,
    cal: CalibrationProfile | None = None,
    seconds_of_day: float = 0.0,
) -> EdgeInputVector:
    """Scale a smoothed sample into the edge model's input ranges.

    soil_n is 0 at the water-detect landmark and 1 at the dry-air landmark;
    readings drier than open air exceed 1 by design. Time of day is encoded
    as sin/cos so midnight and 23:59 are neighbors.
    """
    if not (0 <= seconds_of_day < SECONDS_PER_DAY):
        raise ValueError("seconds_of_day outside [0, 86400)")
    cal = cal or CalibrationProfile()
    soil_n = (smoothed.soil_adc - cal.water_level_adc) / (
        cal.dry_air_adc - cal.water_level_adc
    )
    temp_n = (smoothed.temp_c + TEMP_NORM_OFFSET) / TEMP_NORM_SPAN
    hum_n = smoothed.hum_pct / 100.0
    phase = 2.0 * math.pi * seconds_of_day / SECONDS_PER_DAY
    return EdgeInputVector(
        soil_n=soil_n,
        temp_n=temp_n,
        hum_n=hum_n,
        time_sin=math.sin(phase),
        time_cos=math.cos(phase),
        inter_soil_temp=soil_n * temp_n,
        inter_soil_hum=soil_n * hum_n,
        inter_temp_hum=temp_n * hum_n,
    )


@dataclass
class StressState:
    """EWMA accumulator for the cumulative environmental stress feature."""

    beta: float = 0.1
    value: float | None = None

    def update(self, stress_index: float) -> float:
        if self.value is None:
            self.value = stress_index
        else:
            self.value = (1.0 - self.beta) * self.value + self.beta * stress_index
        return self.value


@dataclass(frozen=True)
class FeatureVector14:
    """The offline 14-feature representation: 5 base channels, 6 derived
    metrics, 3 one-hot light categories."""

    moisture: float
    light: float
    ph: float
    temperature: float
    humidity: float
    moisture_deficit: float
    stress_index: float
    ph_suitability: float
    moisture_change_rate: float
    cumulative_stress: float
    et_proxy: float
    light_low: float
    light_med: float
    light_high: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES_14], dtype=np.float64)


def _clamp01(x: float) -> float:
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


def stress_index_of(temp_c: float, hum_pct: float) -> float:
    """Temperature-humidity composite stress in [0, 1]."""
    return _clamp01((temp_c - 20.0) / 15.0) * (1.0 - hum_pct / 100.0)


def et_proxy_of(temp_c: float, hum_pct: float, light_lux: float) -> float:
    """Evapotranspiration proxy: thermal stress amplified by light."""
    return stress_index_of(temp_c, hum_pct) * (0.5 + 0.5 * light_lux / 5000.0)


def light_one_hot(light_lux: float) -> tuple[float, float, float]:
    """Categorize lux into (low, med, high); both 1000 and 3000 fall in med."""
    if light_lux < 1000.0:
        return (1.0, 0.0, 0.0)
    if light_lux <= 3000.0:
        return (0.0, 1.0, 0.0)
    return (0.0, 0.0, 1.0)


def engineer_features(
    sample: SensorSample,
    prev: SensorSample | None = None,
    stress_state: StressState | None = None,
    cal: CalibrationProfile | None = None,
) -> FeatureVector14:
    """Expand one reading into the 14-feature offline vector.

    prev supplies the moisture change rate (0 when absent); stress_state
    carries the cumulative-stress EWMA across calls. Non-finite inputs are
    rejected.
    """
    cal = cal or CalibrationProfile()
    if sample.ph is None:
        raise ValueError("14-feature vector requires a pH reading")
    values = (sample.soil_adc, sample.temp_c, sample.hum_pct, sample.light_lux, sample.ph)
    if not all(math.isfinite(v) for v in values):
        raise ValueError("non-finite sensor input")

    stress = stress_index_of(sample.temp_c, sample.hum_pct)
    if prev is None:
        change_rate = 0.0
    else:
        dt_min = (sample.ts_ms - prev.ts_ms) / 60000.0
        if dt_min <= 0:
            raise ValueError("prev sample must be older than sample")
        change_rate = (sample.soil_adc - prev.soil_adc) / dt_min
    cum = stress_state.update(stress) if stress_state is not None else stress
    low, med, high = light_one_hot(sample.light_lux)
    return FeatureVector14(
        moisture=sample.soil_adc,
        light=sample.light_lux,
        ph=sample.ph,
        temperature=sample.temp_c,
        humidity=sample.hum_pct,
        moisture_deficit=sample.soil_adc - cal.optimal_adc,
        stress_index=stress,
        ph_suitability=1.0 if PH_SUITABLE_LOW <= sample.ph <= PH_SUITABLE_HIGH else 0.0,
        moisture_change_rate=change_rate,
        cumulative_stress=cum,
        et_proxy=et_proxy_of(sample.temp_c, sample.hum_pct, sample.light_lux),
        light_low=low,
        light_med=med,
        light_high=high,
    )


@dataclass(frozen=True)
class ScalerParams:
    """Per-feature standardization constants fitted on the training split."""

    means: np.ndarray
    stds: np.ndarray

    @classmethod
    def identity(cls, n_features: int) -> "ScalerParams":
        return cls(means=np.zeros(n_features), stds=np.ones(n_features))

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "stds": self.stds.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(
            means=np.asarray(d["means"], dtype=np.float64),
            stds=np.asarray(d["stds"], dtype=np.float64),
        )


def fit_scaler(X: np.ndarray) -> ScalerParams:
    """Fit population-std standardization; constant features get std 1."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("expected a non-empty 2-D matrix")
    means = X.mean(axis=0)
    stds = X.std(axis=0)  # population (biased) convention
    stds = np.where(stds == 0.0, 1.0, stds)
    return ScalerParams(means=means, stds=stds)


def standardize(x: np.ndarray, scaler: ScalerParams) -> np.ndarray:
    """Map features to (x - mean) / std; one-hots are treated no differently."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != scaler.means.shape[0]:
        raise ValueError(
            f"dimension mismatch: vector has {x.shape[-1]} features, "
            f"scaler has {scaler.means.shape[0]}"
        )
    return (x - scaler.means) / scaler.stds


def unstandardize(z: np.ndarray, scaler: ScalerParams) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != scaler.means.shape[0]:
        raise ValueError("dimension mismatch")
    return z * scaler.stds + scaler.means
