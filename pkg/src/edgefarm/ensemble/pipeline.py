"""Dataset-to-matrix plumbing and the two-model comparison report.

Bridges synthdata rows to the trainers: the 14-feature offline matrix for
the irrigation-need task, and the 8-input normalized matrix (the same
vector the edge node builds at runtime) for the water-volume task.
"""

from __future__ import annotations

import numpy as np

from ..synthdata import DatasetRow
from ..telemetry import (
    EDGE_INPUT_NAMES,
    FEATURE_NAMES_14,
    CalibrationProfile,
    SensorSample,
    engineer_features,
    fit_scaler,
    normalize,
    standardize,
)
from .metrics import evaluate, paired_t_test
from .models import Hyperparams, fit_gradient_boosting, fit_random_forest

__all__ = [
    "need_matrix",
    "edge_matrix",
    "train_need_model",
    "train_edge_model",
    "compare_models",
]


def _row_sample(row: DatasetRow) -> SensorSample:
    return SensorSample(
        ts_ms=0,
        soil_adc=row.soil_adc,
        temp_c=row.temp_c,
        hum_pct=row.hum_pct,
        light_lux=row.light_lux,
        ph=row.ph,
    )


def need_matrix(rows: list[DatasetRow], cal: CalibrationProfile | None = None):
    """14-feature matrix plus need targets. Rows are independent draws, so
    each is featurized statelessly (no prev sample, fresh stress EWMA)."""
    cal = cal or CalibrationProfile()
    X = np.empty((len(rows), len(FEATURE_NAMES_14)))
    y = np.empty(len(rows))
    for i, row in enumerate(rows):
        X[i] = engineer_features(_row_sample(row), cal=cal).as_array()
        y[i] = row.need
    return X, y


def edge_matrix(rows: list[DatasetRow], cal: CalibrationProfile | None = None):
    """8-input normalized matrix plus water targets.

    The offline rows carry no clock, so the time features use the fixed
    midnight encoding [0, 1] -- the same fallback the node uses without a
    synchronized clock.
    """
    cal = cal or CalibrationProfile()
    X = np.empty((len(rows), len(EDGE_INPUT_NAMES)))
    y = np.empty(len(rows))
    for i, row in enumerate(rows):
        X[i] = normalize(_row_sample(row), cal=cal, seconds_of_day=0.0).as_array()
        y[i] = row.water_ml
    return X, y


def _train(kind, X_raw, y, hp: Hyperparams, seed, names):
    scaler = fit_scaler(X_raw)
    Z = standardize(X_raw, scaler)
    if kind == "forest":
        return fit_random_forest(Z, y, hp.rf, seed=seed, scaler=scaler, feature_names=names)
    return fit_gradient_boosting(Z, y, hp.gb, seed=seed, scaler=scaler, feature_names=names)


def train_need_model(kind, train_rows, hp: Hyperparams | None = None, seed: int = 0):
    hp = hp or Hyperparams()
    X, y = need_matrix(train_rows)
    return _train(kind, X, y, hp, seed, FEATURE_NAMES_14)


def train_edge_model(kind, train_rows, hp: Hyperparams | None = None, seed: int = 0):
    hp = hp or Hyperparams()
    X, y = edge_matrix(train_rows)
    return _train(kind, X, y, hp, seed, EDGE_INPUT_NAMES)


def compare_models(train_rows, test_rows, hp: Hyperparams | None = None, seed: int = 0) -> dict:
    """Train RF and GB on the need task and emit the side-by-side report:
    full metric suite per model, relative improvements, paired t-test on
    absolute errors, and feature importances."""
    hp = hp or Hyperparams()
    X_train, y_train = need_matrix(train_rows)
    X_test, y_test = need_matrix(test_rows)
    scaler = fit_scaler(X_train)
    Z = standardize(X_train, scaler)

    rf = fit_random_forest(Z, y_train, hp.rf, seed=seed, scaler=scaler, feature_names=FEATURE_NAMES_14)
    gb = fit_gradient_boosting(Z, y_train, hp.gb, seed=seed, scaler=scaler, feature_names=FEATURE_NAMES_14)

    rf_metrics = evaluate(rf, X_test, y_test)
    gb_metrics = evaluate(gb, X_test, y_test)

    rf_err = np.abs(rf.predict(X_test) - y_test)
    gb_err = np.abs(gb.predict(X_test) - y_test)
    ttest = paired_t_test(rf_err, gb_err)

    def rel(a, b):  # improvement of gb over rf, sign per metric direction
        return (b - a) / abs(a) * 100 if a != 0 else float("nan")

    report = {
        "task": "need",
        "seed": seed,
        "n_train": len(train_rows),
        "n_test": len(test_rows),
        "random_forest": {"metrics": rf_metrics.to_dict(), "summary": rf.summary()},
        "gradient_boosting": {"metrics": gb_metrics.to_dict(), "summary": gb.summary()},
        "relative_improvement_pct": {
            "r2": rel(rf_metrics.r2, gb_metrics.r2),
            "rmse": rel(rf_metrics.rmse, gb_metrics.rmse),
            "mae": rel(rf_metrics.mae, gb_metrics.mae),
            "mape_pct": rel(rf_metrics.mape_pct, gb_metrics.mape_pct),
            "p95_abs_err": rel(rf_metrics.p95_abs_err, gb_metrics.p95_abs_err),
        },
        "paired_t_test": ttest,
    }
    return report, rf, gb


def format_comparison(report: dict) -> str:
    """Human-readable comparison table."""
    rf = report["random_forest"]["metrics"]
    gb = report["gradient_boosting"]["metrics"]
    rel = report["relative_improvement_pct"]
    lines = [
        f"Irrigation-need model comparison (n_train={report['n_train']}, n_test={report['n_test']})",
        "",
        f"{'Metric':<22}{'Random Forest':>16}{'Gradient Boosting':>20}{'Change %':>12}",
    ]
    rows = [
        ("R2", "r2", "{:.4f}"),
        ("Explained variance", "explained_variance", "{:.4f}"),
        ("RMSE", "rmse", "{:.5f}"),
        ("MAE", "mae", "{:.5f}"),
        ("MAPE (%)", "mape_pct", "{:.2f}"),
        ("95th pct error", "p95_abs_err", "{:.5f}"),
        ("Mean bias", "mean_bias", "{:+.6f}"),
        ("Train time (s)", "train_time_s", "{:.2f}"),
        ("Infer (us/sample)", "infer_us_per_sample", "{:.2f}"),
    ]
    for label, key, fmt in rows:
        change = rel.get(key)
        change_s = f"{change:+.1f}" if change is not None else ""
        lines.append(f"{label:<22}{fmt.format(rf[key]):>16}{fmt.format(gb[key]):>20}{change_s:>12}")
    t = report["paired_t_test"]
    lines.append("")
    lines.append(f"Paired t-test on |errors| (RF - GB): t = {t['t_stat']:.2f}, p = {t['p_value']:.3g}")
    return "\n".join(lines)
