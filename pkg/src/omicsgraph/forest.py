"""CART random forest used for mean-decrease-in-impurity feature importance.

Trees split on numeric thresholds only.  Feature order never influences the
result: columns are canonicalised by name before any randomness is drawn and
equal-gain splits are resolved by that same name order, so permuting the input
columns permutes the importances and nothing else.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    max_features: str | int = "sqrt"  # "sqrt" | "all" | int
    bootstrap: bool = True
    seed: int = 0

    def n_candidates(self, p: int) -> int:
        if self.max_features == "sqrt":
            return max(1, int(np.sqrt(p)))
        if self.max_features == "all":
            return p
        return max(1, min(p, int(self.max_features)))


def _gini_scan(xs: np.ndarray, onehot: np.ndarray, min_leaf: int):
    """Best threshold on one sorted feature column for classification.

    Returns (impurity decrease * n, threshold) or None.
    """
    n = len(xs)
    left = np.cumsum(onehot, axis=0)[:-1]
    total = left[-1] + onehot[-1]
    right = total - left
    n_left = np.arange(1, n)
    n_right = n - n_left
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    gini_parent = n - (total**2).sum() / n
    # weighted child impurity, scaled by n: n_l * (1 - sum p_l^2) + n_r * (...)
    child = (n_left - (left**2).sum(axis=1) / n_left) + (n_right - (right**2).sum(axis=1) / n_right)
    gain = np.where(valid, gini_parent - child, -np.inf)
    k = int(np.argmax(gain))
    return gain[k], 0.5 * (xs[k] + xs[k + 1])


def _variance_scan(xs: np.ndarray, ys: np.ndarray, min_leaf: int):
    n = len(xs)
    csum = np.cumsum(ys)[:-1]
    csq = np.cumsum(ys**2)[:-1]
    tsum, tsq = ys.sum(), (ys**2).sum()
    n_left = np.arange(1, n)
    n_right = n - n_left
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    sse_parent = tsq - tsum**2 / n
    sse_child = (csq - csum**2 / n_left) + ((tsq - csq) - (tsum - csum) ** 2 / n_right)
    gain = np.where(valid, sse_parent - sse_child, -np.inf)
    k = int(np.argmax(gain))
    return gain[k], 0.5 * (xs[k] + xs[k + 1])


class _Tree:
    def __init__(self, classification: bool, cfg: ForestConfig, rng: np.random.Generator):
        self.classification = classification
        self.cfg = cfg
        self.rng = rng

    def fit(self, X: np.ndarray, y: np.ndarray, n_classes: int, n_total: int) -> np.ndarray:
        self.importance = np.zeros(X.shape[1])
        self.n_classes = n_classes
        self.n_total = n_total
        self.nodes = []
        self._grow(X, y, depth=0)
        return self.importance

    def _leaf_value(self, y):
        if self.classification:
            return np.bincount(y, minlength=self.n_classes) / len(y)
        return float(np.mean(y))

    def _grow(self, X, y, depth) -> int:
        node_id = len(self.nodes)
        self.nodes.append(None)
        n = len(y)
        cfg = self.cfg
        pure = (np.all(y == y[0]))
        if pure or n < 2 * cfg.min_samples_leaf or (cfg.max_depth is not None and depth >= cfg.max_depth):
            self.nodes[node_id] = ("leaf", self._leaf_value(y))
            return node_id
        p = X.shape[1]
        candidates = np.sort(self.rng.choice(p, size=cfg.n_candidates(p), replace=False))
        onehot = np.eye(self.n_classes)[y] if self.classification else None
        best = None
        for f in candidates:
            order = np.argsort(X[:, f], kind="stable")
            xs = X[order, f]
            if self.classification:
                res = _gini_scan(xs, onehot[order], cfg.min_samples_leaf)
            else:
                res = _variance_scan(xs, y[order].astype(np.float64), cfg.min_samples_leaf)
            # strict > keeps the lowest canonical index on ties
            if res is not None and res[0] > 0 and (best is None or res[0] > best[0]):
                best = (res[0], f, res[1])
        if best is None:
            self.nodes[node_id] = ("leaf", self._leaf_value(y))
            return node_id
        gain, f, thr = best
        # gain is already n_t * (impurity decrease); MDI weights by n_t / N
        self.importance[f] += gain / self.n_total
        mask = X[:, f] <= thr
        left = self._grow(X[mask], y[mask], depth + 1)
        right = self._grow(X[~mask], y[~mask], depth + 1)
        self.nodes[node_id] = ("split", f, thr, left, right)
        return node_id

    def predict_row(self, x):
        node = self.nodes[0]
        while node[0] == "split":
            _, f, thr, left, right = node
            node = self.nodes[left] if x[f] <= thr else self.nodes[right]
        return node[1]


class RandomForest:
    """Bootstrap forest of CART trees (Gini for classes, variance reduction otherwise)."""

    def __init__(self, config: ForestConfig = ForestConfig(), classification: bool = True):
        self.config = config
        self.classification = classification

    def fit(self, X: np.ndarray, y: np.ndarray, feature_names=None) -> "RandomForest":
        X = np.asarray(X, dtype=np.float64)
        n, p = X.shape
        if n < self.config.min_samples_leaf:
            raise ValueError(f"{n} subjects is fewer than min_samples_leaf={self.config.min_samples_leaf}")
        names = list(feature_names) if feature_names is not None else [f"{i:012d}" for i in range(p)]
        self._canon = np.array(sorted(range(p), key=lambda i: names[i]))
        Xc = X[:, self._canon]
        if self.classification:
            y = np.asarray(y, dtype=np.int64)
            n_classes = int(y.max()) + 1
        else:
            y = np.asarray(y, dtype=np.float64)
            n_classes = 0
        self.trees = []
        per_tree = np.zeros((self.config.n_trees, p))
        for t in range(self.config.n_trees):
            rng = np.random.default_rng(self.config.seed + t)
            idx = rng.integers(0, n, size=n) if self.config.bootstrap else np.arange(n)
            tree = _Tree(self.classification, self.config, rng)
            imp = tree.fit(Xc[idx], y[idx], n_classes, len(idx))
            total = imp.sum()
            if total > 0:
                per_tree[t] = imp / total
            self.trees.append(tree)
        mean = per_tree.mean(axis=0)
        importance = np.zeros(p)
        importance[self._canon] = mean
        self.feature_importances_ = importance
        self.n_classes = n_classes
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        Xc = np.asarray(X, dtype=np.float64)[:, self._canon]
        out = []
        for row in Xc:
            votes = [t.predict_row(row) for t in self.trees]
            if self.classification:
                out.append(int(np.argmax(np.mean(votes, axis=0))))
            else:
                out.append(float(np.mean(votes)))
        return np.array(out)
