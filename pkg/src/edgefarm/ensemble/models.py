"""Random Forest and Gradient Boosting ensembles over the CART base learner.

Both trainers are seeded and sequential so a fixed seed yields a
bit-identical model. The fitted model carries its standardization
parameters, so prediction takes raw feature vectors.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..telemetry import ScalerParams, standardize
from .cart import CartParams, CartTree, fit_cart

__all__ = [
    "RandomForestParams",
    "GradientBoostingParams",
    "Hyperparams",
    "TreeEnsembleModel",
    "fit_random_forest",
    "fit_gradient_boosting",
    "feature_importance",
]


@dataclass(frozen=True)
class RandomForestParams:
    n_estimators: int = 100
    max_depth: int = 10
    min_samples_split: int = 5
    min_samples_leaf: int = 2
    max_features_fraction: float = 1.0
    bootstrap: bool = True

    def __post_init__(self) -> None:
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if not (0 < self.max_features_fraction <= 1):
            raise ValueError("max_features_fraction must be in (0, 1]")


@dataclass(frozen=True)
class GradientBoostingParams:
    n_estimators: int = 100
    learning_rate: float = 0.1
    max_depth: int = 5
    min_samples_split: int = 10
    min_samples_leaf: int = 4
    subsample: float = 0.8

    def __post_init__(self) -> None:
        if self.n_estimators < 0:
            raise ValueError("n_estimators must be >= 0")
        if not (0 < self.learning_rate <= 1):
            raise ValueError("learning_rate must be in (0, 1]")
        if not (0 < self.subsample <= 1):
            raise ValueError("subsample must be in (0, 1]")


@dataclass(frozen=True)
class Hyperparams:
    rf: RandomForestParams = field(default_factory=RandomForestParams)
    gb: GradientBoostingParams = field(default_factory=GradientBoostingParams)


@dataclass
class TreeEnsembleModel:
    """A fitted forest or boosting ensemble plus its input scaler.

    forest prediction: mean over tree outputs.
    boosting prediction: init_value + learning_rate * sum of tree outputs.
    """

    kind: str  # "forest" | "boosting"
    trees: list[CartTree]
    init_value: float
    learning_rate: float
    scaler: ScalerParams
    feature_names: tuple[str, ...]
    train_time_s: float = 0.0

    @property
    def n_features(self) -> int:
        return len(self.scaler.means)

    def predict_standardized(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        if self.kind == "boosting":
            out = np.full(Z.shape[0], self.init_value)
            for tree in self.trees:
                out += self.learning_rate * tree.predict(Z)
            return out
        if not self.trees:
            return np.full(Z.shape[0], self.init_value)
        out = np.zeros(Z.shape[0])
        for tree in self.trees:
            out += tree.predict(Z)
        return out / len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_standardized(standardize(X, self.scaler))

    def per_tree_predictions(self, X: np.ndarray) -> np.ndarray:
        """(n_trees, n_rows) raw tree outputs, for telescoping checks."""
        Z = standardize(np.atleast_2d(np.asarray(X, dtype=np.float64)), self.scaler)
        return np.stack([t.predict(Z) for t in self.trees]) if self.trees else np.zeros((0, Z.shape[0]))

    def summary(self) -> dict:
        imp = feature_importance(self)
        return {
            "kind": self.kind,
            "n_trees": len(self.trees),
            "n_features": self.n_features,
            "init_value": self.init_value,
            "learning_rate": self.learning_rate,
            "n_nodes": int(sum(t.n_nodes for t in self.trees)),
            "max_depth": max((t.depth() for t in self.trees), default=0),
            "train_time_s": self.train_time_s,
            "feature_names": list(self.feature_names),
            "importance": imp.tolist() if imp.sum() > 0 else [],
        }


def _default_names(n: int) -> tuple[str, ...]:
    return tuple(f"f{i}" for i in range(n))


def fit_random_forest(
    X: np.ndarray,
    y: np.ndarray,
    params: RandomForestParams | None = None,
    seed: int = 0,
    scaler: ScalerParams | None = None,
    feature_names: tuple[str, ...] | None = None,
) -> TreeEnsembleModel:
    """Train params.n_estimators trees on bootstrap resamples and average.

    X is expected standardized; pass the scaler so the model can
    standardize raw inputs at prediction time.
    """
    params = params or RandomForestParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    n, n_features = X.shape
    max_features = max(1, round(params.max_features_fraction * n_features))
    cart = CartParams(
        max_depth=params.max_depth,
        min_samples_split=params.min_samples_split,
        min_samples_leaf=params.min_samples_leaf,
        max_features=None if max_features >= n_features else max_features,
    )
    seeds = np.random.SeedSequence(seed).spawn(params.n_estimators)
    t0 = time.perf_counter()
    trees = []
    for ss in seeds:
        rng = np.random.default_rng(ss)
        idx = rng.integers(0, n, n) if params.bootstrap else np.arange(n)
        trees.append(fit_cart(X[idx], y[idx], cart, rng=rng))
    return TreeEnsembleModel(
        kind="forest",
        trees=trees,
        init_value=0.0,
        learning_rate=1.0,
        scaler=scaler or ScalerParams.identity(n_features),
        feature_names=tuple(feature_names) if feature_names else _default_names(n_features),
        train_time_s=time.perf_counter() - t0,
    )


def fit_gradient_boosting(
    X: np.ndarray,
    y: np.ndarray,
    params: GradientBoostingParams | None = None,
    seed: int = 0,
    scaler: ScalerParams | None = None,
    feature_names: tuple[str, ...] | None = None,
) -> TreeEnsembleModel:
    """Least-squares boosting: start from mean(y), then fit each tree to the
    current residuals on a seeded row subsample."""
    params = params or GradientBoostingParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    n, n_features = X.shape
    cart = CartParams(
        max_depth=params.max_depth,
        min_samples_split=params.min_samples_split,
        min_samples_leaf=params.min_samples_leaf,
    )
    n_sub = max(1, round(params.subsample * n))
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    t0 = time.perf_counter()
    init = float(y.mean())
    F = np.full(n, init)
    trees = []
    for _ in range(params.n_estimators):
        idx = rng.permutation(n)[:n_sub] if n_sub < n else np.arange(n)
        resid = y[idx] - F[idx]
        tree = fit_cart(X[idx], resid, cart)
        trees.append(tree)
        F += params.learning_rate * tree.predict(X)
    return TreeEnsembleModel(
        kind="boosting",
        trees=trees,
        init_value=init,
        learning_rate=params.learning_rate,
        scaler=scaler or ScalerParams.identity(n_features),
        feature_names=tuple(feature_names) if feature_names else _default_names(n_features),
        train_time_s=time.perf_counter() - t0,
    )


def feature_importance(model: TreeEnsembleModel) -> np.ndarray:
    """Impurity importances: per split, accumulate the SSE reduction onto
    the split feature, then normalize so the vector sums to 1. A model with
    zero splits yields all zeros."""
    imp = np.zeros(model.n_features)
    for tree in model.trees:
        internal = tree.feature >= 0
        np.add.at(imp, tree.feature[internal], tree.gain[internal])
    total = imp.sum()
    return imp / total if total > 0 else imp
