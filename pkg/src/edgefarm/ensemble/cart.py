"""CART regression trees with exact greedy variance-reduction splitting.

Candidate thresholds are midpoints of consecutive sorted unique feature
values; the chosen split maximizes the reduction in summed squared error,
with ties broken toward the lowest feature index and then the lowest
threshold so fits are fully deterministic. Trees are stored as flat
arrays, which keeps prediction vectorized and maps directly onto the
compact on-device format.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["CartParams", "CartTree", "fit_cart", "best_split_brute_force"]


@dataclass(frozen=True)
class CartParams:
    max_depth: int = 10
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features: int | None = None  # per-split feature subsample; None = all

    def __post_init__(self) -> None:
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


class CartTree:
    """Flat-array binary regression tree.

    feature[i] >= 0 marks an internal node with its split feature;
    feature[i] == -1 marks a leaf. threshold holds split points for
    internal nodes, value holds leaf predictions, gain holds each split's
    SSE reduction (used for impurity importances).
    """

    __slots__ = ("feature", "threshold", "value", "left", "right", "gain", "n_samples")

    def __init__(self, feature, threshold, value, left, right, gain, n_samples):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.value = np.asarray(value, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.gain = np.asarray(gain, dtype=np.float64)
        self.n_samples = np.asarray(n_samples, dtype=np.int64)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int32)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return int(depths.max()) if self.n_nodes else 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        idx = np.zeros(X.shape[0], dtype=np.int32)
        while True:
            f = self.feature[idx]
            active = np.nonzero(f >= 0)[0]
            if active.size == 0:
                break
            cur = idx[active]
            fa = f[active]
            go_left = X[active, fa] <= self.threshold[cur]
            idx[active] = np.where(go_left, self.left[cur], self.right[cur])
        return self.value[idx]


def _best_split_at_node(X, y, idx, min_leaf, feat_ids):
    """Best (reduction, feature, threshold) over candidate midpoints, or None.

    reduction is the decrease in SSE: sl^2/nl + sr^2/nr - s^2/n.
    """
    n = idx.size
    y_node = y[idx]
    total = y_node.sum()
    parent_term = total * total / n
    best_red = 0.0
    best = None
    for f in feat_ids:
        xv = X[idx, f]
        order = np.argsort(xv, kind="stable")
        xs = xv[order]
        ys = y_node[order]
        cs = np.cumsum(ys)
        pos = np.nonzero(xs[:-1] < xs[1:])[0]
        if pos.size == 0:
            continue
        nl = pos + 1
        keep = (nl >= min_leaf) & (n - nl >= min_leaf)
        pos = pos[keep]
        if pos.size == 0:
            continue
        nl = nl[keep]
        sl = cs[pos]
        sr = total - sl
        red = sl * sl / nl + sr * sr / (n - nl) - parent_term
        j = int(np.argmax(red))  # first max -> lowest threshold in this feature
        if red[j] > best_red:
            best_red = float(red[j])
            thresh = (xs[pos[j]] + xs[pos[j] + 1]) / 2.0
            best = (best_red, int(f), float(thresh))
    return best


def best_split_brute_force(X, y, min_leaf=1):
    """Independent oracle: enumerate every (feature, midpoint) candidate
    and score it directly from the two partitions' variances."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    sse_parent = float(((y - y.mean()) ** 2).sum())
    best = None
    for f in range(X.shape[1]):
        uniq = np.unique(X[:, f])
        for a, b in zip(uniq[:-1], uniq[1:]):
            t = (a + b) / 2.0
            mask = X[:, f] <= t
            nl = int(mask.sum())
            if nl < min_leaf or n - nl < min_leaf:
                continue
            yl, yr = y[mask], y[~mask]
            sse = float(((yl - yl.mean()) ** 2).sum() + ((yr - yr.mean()) ** 2).sum())
            red = sse_parent - sse
            if best is None or red > best[0]:
                best = (red, f, t)
    if best is None or best[0] <= 0:
        return None
    return best


def fit_cart(
    X: np.ndarray,
    y: np.ndarray,
    params: CartParams,
    rng: np.random.Generator | None = None,
) -> CartTree:
    """Grow a tree by greedy SSE-reduction splits.

    Stops splitting a node when it is pure, smaller than min_samples_split,
    at max_depth, or when no candidate improves SSE. Leaf value is the mean
    of covered targets.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y length mismatch")

    n_features = X.shape[1]
    feature, threshold, value = [], [], []
    left, right, gain, n_samples = [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        value.append(0.0)
        left.append(-1)
        right.append(-1)
        gain.append(0.0)
        n_samples.append(0)
        return len(feature) - 1

    def build(idx: np.ndarray, depth: int) -> int:
        node = new_node()
        y_node = y[idx]
        n_samples[node] = idx.size
        can_split = (
            depth < params.max_depth
            and idx.size >= params.min_samples_split
            and y_node.min() < y_node.max()
        )
        best = None
        if can_split:
            if params.max_features is not None and params.max_features < n_features:
                if rng is None:
                    raise ValueError("max_features subsetting requires an rng")
                feat_ids = np.sort(rng.choice(n_features, params.max_features, replace=False))
            else:
                feat_ids = range(n_features)
            best = _best_split_at_node(X, y, idx, params.min_samples_leaf, feat_ids)
        if best is None:
            value[node] = float(y_node.mean())
            return node
        red, f, t = best
        feature[node] = f
        threshold[node] = t
        gain[node] = red
        mask = X[idx, f] <= t
        left[node] = build(idx[mask], depth + 1)
        right[node] = build(idx[~mask], depth + 1)
        return node

    build(np.arange(X.shape[0]), 0)
    return CartTree(feature, threshold, value, left, right, gain, n_samples)
