"""Synthetic agro-environmental dataset generator and CSV I/O.

The original field dataset is private, so experiments run on a
statistically matched surrogate: marginal means/stds and hard min/max
bounds per channel, a negative temperature-humidity coupling, and a
bimodal pH mix whose median exceeds its mean. Two regression targets are
attached per row: a normalized irrigation-need score and a water volume
in milliliters.

Both targets are deterministic functions of the sensor channels up to a
small stated noise, so high R-squared is achievable by construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .telemetry import (
    PH_SUITABLE_HIGH,
    PH_SUITABLE_LOW,
    et_proxy_of,
    stress_index_of,
)

__all__ = [
    "GeneratorConfig",
    "DatasetRow",
    "CLIP_BOUNDS",
    "NEED_WEIGHTS",
    "generate",
    "need_components",
    "label_need",
    "label_water_ml",
    "split",
    "write_csv",
    "read_csv",
    "dataset_stats",
    "WATER_HEADER",
    "NEED_HEADER",
]

# Hard channel bounds; every generated value is clipped to these.
CLIP_BOUNDS = {
    "soil_adc": (501.0, 4095.0),
    "light_lux": (0.0, 5000.0),
    "ph": (3.0, 12.0),
    "temp_c": (20.0, 35.0),
    "hum_pct": (20.0, 90.0),
}

# Pre-clip marginal parameters, solved numerically so the post-clip
# mean/std land on the target statistics (see scripts/calibrate_labels.py).
_MOIST_MU, _MOIST_SD = 2703.85, 970.09
_LIGHT_MU, _LIGHT_SD = 2493.27, 1613.48
_TEMP_MU, _TEMP_SD = 27.21, 4.44
_HUM_MU, _HUM_SD = 54.50, 20.81
_PH_ACID_P, _PH_ACID_MU, _PH_ACID_SD = 0.35, 4.12, 0.8
_PH_ALK_MU, _PH_ALK_SD = 9.32, 0.9
# Clipping shrinks the realized correlation by ~2%.
_RHO_CLIP_SHRINK = 0.98

# Need-label weights over (positive-deficit, stress, et-proxy, light, ph
# penalty); calibrated so a 30001-row run has mean ~0.455, sd ~0.107 and a
# dominant medium zone. Measured stats live in tests/fixtures/need_label_stats.json.
NEED_WEIGHTS = (0.22, 0.15, 0.12, 0.10, 0.29)

# Water-label shape: k * (deficit/1000)^1.5 amplified by stress and light.
WATER_K = 150.0
WATER_STRESS_GAIN = 2.0
WATER_LIGHT_GAIN = 1.0
WATER_EXPONENT = 1.5

_DEFICIT_SPAN = 4095.0 - 2500.0

WATER_HEADER = "soil_adc,light,temperature,humidity,water_ml"
NEED_HEADER = "soil_adc,light,ph,temperature,humidity,need"


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for the surrogate dataset; serializable as versioned JSON."""

    n_rows: int = 30001
    seed: int = 7
    temp_hum_rho: float = -0.42
    need_weights: tuple[float, ...] = NEED_WEIGHTS
    noise_sd: float = 0.01

    def __post_init__(self) -> None:
        if self.n_rows < 1:
            raise ValueError("n_rows must be >= 1")
        if not (-1.0 < self.temp_hum_rho < 1.0):
            raise ValueError("temp_hum_rho must be in (-1, 1)")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if len(self.need_weights) != 5:
            raise ValueError("need_weights must have 5 entries")

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": 1,
                "n_rows": self.n_rows,
                "seed": self.seed,
                "temp_hum_rho": self.temp_hum_rho,
                "need_weights": list(self.need_weights),
                "noise_sd": self.noise_sd,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "GeneratorConfig":
        doc = json.loads(text)
        version = doc.get("schema_version")
        if version != 1:
            raise ValueError(f"unsupported generator config schema_version: {version!r}")
        return cls(
            n_rows=int(doc["n_rows"]),
            seed=int(doc["seed"]),
            temp_hum_rho=float(doc["temp_hum_rho"]),
            need_weights=tuple(float(w) for w in doc["need_weights"]),
            noise_sd=float(doc["noise_sd"]),
        )


@dataclass(frozen=True)
class DatasetRow:
    """Five base channels plus the two regression targets."""

    soil_adc: float
    light_lux: float
    ph: float | None
    temp_c: float
    hum_pct: float
    need: float | None = None
    water_ml: float | None = None


def need_components(
    soil_adc: float, light_lux: float, ph: float, temp_c: float, hum_pct: float
) -> tuple[float, float, float, float, float]:
    """The five unit-scaled drivers the need label is a weighted sum of."""
    deficit = max(soil_adc - 2500.0, 0.0) / _DEFICIT_SPAN
    stress = stress_index_of(temp_c, hum_pct)
    et = et_proxy_of(temp_c, hum_pct, light_lux)
    light_n = light_lux / 5000.0
    ph_penalty = 0.0 if PH_SUITABLE_LOW <= ph <= PH_SUITABLE_HIGH else 1.0
    return (deficit, stress, et, light_n, ph_penalty)


def label_need(
    row: DatasetRow, weights: tuple[float, ...] = NEED_WEIGHTS, noise: float = 0.0
) -> float:
    """Irrigation-need score in [0, 1]; noise is the realized eps draw."""
    comps = need_components(row.soil_adc, row.light_lux, row.ph, row.temp_c, row.hum_pct)
    raw = sum(w * c for w, c in zip(weights, comps)) + noise
    return min(max(raw, 0.0), 1.0)


def label_water_ml(row: DatasetRow, noise: float = 0.0) -> float:
    """Milliliters to dispense: zero at or below the optimal ADC landmark,
    then a smooth increasing function of the deficit amplified by thermal
    stress and light. noise is a multiplicative factor in [-0.02, 0.02]."""
    deficit = row.soil_adc - 2500.0
    if deficit <= 0:
        return 0.0
    stress = stress_index_of(row.temp_c, row.hum_pct)
    amp = 1.0 + WATER_STRESS_GAIN * stress + WATER_LIGHT_GAIN * row.light_lux / 5000.0
    ml = WATER_K * (deficit / 1000.0) ** WATER_EXPONENT * amp
    return ml * (1.0 + noise)


def _generate_arrays(cfg: GeneratorConfig) -> dict[str, np.ndarray]:
    n = cfg.n_rows
    rng = np.random.default_rng(cfg.seed)

    # Gaussian copula for (temp, hum); other channels independent.
    rho = max(-0.999, min(0.999, cfg.temp_hum_rho / _RHO_CLIP_SHRINK))
    z = rng.standard_normal((n, 2))
    z_temp = z[:, 0]
    z_hum = rho * z[:, 0] + math.sqrt(1.0 - rho * rho) * z[:, 1]
    temp = np.clip(_TEMP_MU + _TEMP_SD * z_temp, *CLIP_BOUNDS["temp_c"])
    hum = np.clip(_HUM_MU + _HUM_SD * z_hum, *CLIP_BOUNDS["hum_pct"])

    moist = np.clip(rng.normal(_MOIST_MU, _MOIST_SD, n), *CLIP_BOUNDS["soil_adc"])
    light = np.clip(rng.normal(_LIGHT_MU, _LIGHT_SD, n), *CLIP_BOUNDS["light_lux"])

    acid = rng.random(n) < _PH_ACID_P
    ph_acid = rng.normal(_PH_ACID_MU, _PH_ACID_SD, n)
    ph_alk = rng.normal(_PH_ALK_MU, _PH_ALK_SD, n)
    ph = np.clip(np.where(acid, ph_acid, ph_alk), *CLIP_BOUNDS["ph"])

    need_eps = rng.normal(0.0, cfg.noise_sd, n) if cfg.noise_sd > 0 else np.zeros(n)
    water_eps = rng.uniform(-0.02, 0.02, n)

    # Vectorized label math, identical to label_need / label_water_ml.
    w = np.asarray(cfg.need_weights)
    deficit_n = np.maximum(moist - 2500.0, 0.0) / _DEFICIT_SPAN
    stress = np.clip((temp - 20.0) / 15.0, 0.0, 1.0) * (1.0 - hum / 100.0)
    et = stress * (0.5 + 0.5 * light / 5000.0)
    light_n = light / 5000.0
    ph_pen = 1.0 - ((ph >= PH_SUITABLE_LOW) & (ph <= PH_SUITABLE_HIGH)).astype(float)
    need = np.clip(
        w[0] * deficit_n + w[1] * stress + w[2] * et + w[3] * light_n + w[4] * ph_pen + need_eps,
        0.0,
        1.0,
    )

    deficit = moist - 2500.0
    amp = 1.0 + WATER_STRESS_GAIN * stress + WATER_LIGHT_GAIN * light_n
    water = np.where(
        deficit <= 0,
        0.0,
        WATER_K * (np.maximum(deficit, 0.0) / 1000.0) ** WATER_EXPONENT * amp * (1.0 + water_eps),
    )

    return {
        "soil_adc": moist,
        "light_lux": light,
        "ph": ph,
        "temp_c": temp,
        "hum_pct": hum,
        "need": need,
        "water_ml": water,
    }


def generate(cfg: GeneratorConfig) -> list[DatasetRow]:
    """Draw the dataset; identical config yields identical rows."""
    a = _generate_arrays(cfg)
    return [
        DatasetRow(
            soil_adc=float(a["soil_adc"][i]),
            light_lux=float(a["light_lux"][i]),
            ph=float(a["ph"][i]),
            temp_c=float(a["temp_c"][i]),
            hum_pct=float(a["hum_pct"][i]),
            need=float(a["need"][i]),
            water_ml=float(a["water_ml"][i]),
        )
        for i in range(cfg.n_rows)
    ]


def split(rows: list, fraction: float = 0.8, seed: int = 0) -> tuple[list, list]:
    """Deterministic shuffled split; train size is ceil(n * fraction)."""
    if not rows:
        raise ValueError("rows must be non-empty")
    if not (0.0 < fraction < 1.0):
        raise ValueError("fraction must be in (0, 1)")
    n = len(rows)
    idx = np.random.default_rng(seed).permutation(n)
    n_train = math.ceil(n * fraction)
    train = [rows[i] for i in idx[:n_train]]
    test = [rows[i] for i in idx[n_train:]]
    return train, test


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(path, rows: list[DatasetRow], task: str) -> None:
    """Write the canonical CSV for a task ('water' or 'need'): UTF-8, LF
    line endings, full float precision."""
    if task == "water":
        header = WATER_HEADER
    elif task == "need":
        header = NEED_HEADER
    else:
        raise ValueError(f"unknown task {task!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(header + "\n")
        for r in rows:
            if task == "water":
                cells = (r.soil_adc, r.light_lux, r.temp_c, r.hum_pct, r.water_ml)
            else:
                cells = (r.soil_adc, r.light_lux, r.ph, r.temp_c, r.hum_pct, r.need)
            f.write(",".join(_fmt(c) for c in cells) + "\n")


class CsvFormatError(ValueError):
    pass


def read_csv(path) -> tuple[list[DatasetRow], str]:
    """Parse a canonical CSV back into rows; returns (rows, task).

    Malformed rows (wrong arity, non-numeric cells) are reported with
    their 1-based line number.
    """
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header == WATER_HEADER:
            task, arity = "water", 5
        elif header == NEED_HEADER:
            task, arity = "need", 6
        else:
            raise CsvFormatError(f"line 1: unrecognized header {header!r}")
        rows: list[DatasetRow] = []
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != arity:
                raise CsvFormatError(
                    f"line {lineno}: expected {arity} fields, got {len(cells)}"
                )
            try:
                vals = [float(c) for c in cells]
            except ValueError as e:
                raise CsvFormatError(f"line {lineno}: non-numeric cell ({e})") from None
            if task == "water":
                rows.append(
                    DatasetRow(
                        soil_adc=vals[0], light_lux=vals[1], ph=None,
                        temp_c=vals[2], hum_pct=vals[3], water_ml=vals[4],
                    )
                )
            else:
                rows.append(
                    DatasetRow(
                        soil_adc=vals[0], light_lux=vals[1], ph=vals[2],
                        temp_c=vals[3], hum_pct=vals[4], need=vals[5],
                    )
                )
    return rows, task


def dataset_stats(rows: list[DatasetRow]) -> dict:
    """Marginal and coupling statistics used by reports and acceptance checks."""
    cols = {
        "soil_adc": np.array([r.soil_adc for r in rows]),
        "light_lux": np.array([r.light_lux for r in rows]),
        "ph": np.array([r.ph for r in rows], dtype=np.float64),
        "temp_c": np.array([r.temp_c for r in rows]),
        "hum_pct": np.array([r.hum_pct for r in rows]),
    }
    out: dict = {"n_rows": len(rows)}
    for name, x in cols.items():
        out[name] = {
            "mean": float(x.mean()),
            "std": float(x.std()),
            "min": float(x.min()),
            "max": float(x.max()),
            "median": float(np.median(x)),
        }
    out["corr_temp_hum"] = float(np.corrcoef(cols["temp_c"], cols["hum_pct"])[0, 1])
    needs = np.array([r.need for r in rows if r.need is not None])
    if needs.size:
        lo = float((needs < 0.3).mean())
        hi = float((needs > 0.6).mean())
        out["need"] = {
            "mean": float(needs.mean()),
            "std": float(needs.std()),
            "zone_low": lo,
            "zone_medium": 1.0 - lo - hi,
            "zone_high": hi,
        }
    waters = np.array([r.water_ml for r in rows if r.water_ml is not None])
    if waters.size:
        out["water_ml"] = {
            "mean": float(waters.mean()),
            "max": float(waters.max()),
            "frac_zero": float((waters == 0.0).mean()),
        }
    return out
