"""Regression evaluation metrics, paired significance testing, learning curves."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

__all__ = ["MetricsReport", "evaluate", "r2_score", "paired_t_test", "learning_curve"]


@dataclass(frozen=True)
class MetricsReport:
    r2: float
    explained_variance: float
    rmse: float
    mae: float
    mape_pct: float
    p95_abs_err: float
    mean_bias: float
    train_time_s: float
    infer_us_per_sample: float

    def to_dict(self) -> dict:
        return asdict(self)


def r2_score(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    sst = float(((y_true - y_true.mean()) ** 2).sum())
    if sst == 0.0:
        raise ValueError("r2 undefined: constant y_true (SST = 0)")
    sse = float(((y_true - y_pred) ** 2).sum())
    return 1.0 - sse / sst


def evaluate(model, X_test: np.ndarray, y_test: np.ndarray) -> MetricsReport:
    """Score a fitted model on a raw-feature test set.

    MAPE is computed over rows with |y| > 1e-6 only; the 95th-percentile
    error uses linear interpolation between order statistics.
    """
    y_test = np.asarray(y_test, dtype=np.float64)
    if y_test.size == 0:
        raise ValueError("empty test set")
    t0 = time.perf_counter()
    y_pred = model.predict(X_test)
    infer_us = (time.perf_counter() - t0) / y_test.size * 1e6
    resid = y_pred - y_test
    abs_err = np.abs(resid)
    nonzero = np.abs(y_test) > 1e-6
    mape = float((abs_err[nonzero] / np.abs(y_test[nonzero])).mean() * 100) if nonzero.any() else float("nan")
    var_y = float(y_test.var())
    if var_y == 0.0:
        raise ValueError("r2 undefined: constant y_test (SST = 0)")
    return MetricsReport(
        r2=r2_score(y_test, y_pred),
        explained_variance=1.0 - float(resid.var()) / var_y,
        rmse=float(np.sqrt((resid**2).mean())),
        mae=float(abs_err.mean()),
        mape_pct=mape,
        p95_abs_err=float(np.percentile(abs_err, 95)),
        mean_bias=float(resid.mean()),
        train_time_s=getattr(model, "train_time_s", 0.0),
        infer_us_per_sample=infer_us,
    )


def paired_t_test(abs_err_a: np.ndarray, abs_err_b: np.ndarray) -> dict:
    """Paired t on error differences d = |err_a| - |err_b|.

    Two-sided p via the normal approximation, which the n >= 30 precondition
    justifies. Degenerate zero-variance differences are rejected unless the
    vectors are identical (t = 0, p = 1).
    """
    a = np.asarray(abs_err_a, dtype=np.float64)
    b = np.asarray(abs_err_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("error vectors must have equal length")
    n = a.size
    if n < 30:
        raise ValueError("paired t-test requires n >= 30 (normal approximation regime)")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return {"t_stat": 0.0, "p_value": 1.0}
        raise ValueError("degenerate paired differences: zero variance, nonzero mean")
    t = mean / (sd / math.sqrt(n))
    p = math.erfc(abs(t) / math.sqrt(2.0))
    return {"t_stat": t, "p_value": p}


def learning_curve(
    X: np.ndarray,
    y: np.ndarray,
    fit_fn,
    fractions=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
    seed: int = 0,
    holdout_fraction: float = 0.2,
    min_rows: int = 2,
) -> list[tuple[float, float, float]]:
    """Fit on growing prefixes of a seeded shuffle, scoring each fit on the
    training prefix and on a fixed holdout.

    fit_fn(X_train, y_train) -> model with .predict. Returns rows of
    (fraction, train_r2, val_r2).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_hold = max(1, int(round(holdout_fraction * n)))
    hold, train = order[:n_hold], order[n_hold:]
    X_hold, y_hold = X[hold], y[hold]
    X_train, y_train = X[train], y[train]
    rows = []
    for frac in fractions:
        if not (0.0 < frac <= 1.0):
            raise ValueError(f"fraction {frac} outside (0, 1]")
        m = math.ceil(frac * len(y_train))
        if m < min_rows:
            raise ValueError(f"fraction {frac} yields {m} rows, below the minimum {min_rows}")
        model = fit_fn(X_train[:m], y_train[:m])
        rows.append(
            (
                float(frac),
                r2_score(y_train[:m], model.predict(X_train[:m])),
                r2_score(y_hold, model.predict(X_hold)),
            )
        )
    return rows
