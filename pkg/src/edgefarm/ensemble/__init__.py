"""From-scratch tree ensembles: CART, Random Forest, Gradient Boosting,
evaluation metrics, significance testing, and learning curves."""

from .cart import CartParams, CartTree, best_split_brute_force, fit_cart
from .metrics import MetricsReport, evaluate, learning_curve, paired_t_test, r2_score
from .models import (
    GradientBoostingParams,
    Hyperparams,
    RandomForestParams,
    TreeEnsembleModel,
    feature_importance,
    fit_gradient_boosting,
    fit_random_forest,
)
from .pipeline import (
    compare_models,
    edge_matrix,
    format_comparison,
    need_matrix,
    train_edge_model,
    train_need_model,
)

__all__ = [
    "CartParams",
    "CartTree",
    "fit_cart",
    "best_split_brute_force",
    "MetricsReport",
    "evaluate",
    "learning_curve",
    "paired_t_test",
    "r2_score",
    "RandomForestParams",
    "GradientBoostingParams",
    "Hyperparams",
    "TreeEnsembleModel",
    "feature_importance",
    "fit_random_forest",
    "fit_gradient_boosting",
    "compare_models",
    "format_comparison",
    "need_matrix",
    "edge_matrix",
    "train_need_model",
    "train_edge_model",
]
