"""Bagged decision-tree ensemble for binary classification.

Plain CART trees (Gini impurity, midpoint thresholds) over bootstrap samples
with per-split feature subsampling and majority vote.  Written against numpy
only so that training is deterministic for a given seed and fitted models
serialize losslessly to JSON (flat node arrays per tree).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = ["RandomForest"]

FORMAT_VERSION = 1


def _gini_split_scan(x_sorted: np.ndarray, y_sorted: np.ndarray):
    """Best threshold for one feature; returns (impurity, threshold) or None.

    Vectorized scan over the n-1 split positions between sorted samples:
    weighted Gini of the two sides from cumulative positive counts.
    """
    n = len(y_sorted)
    pos_cum = np.cumsum(y_sorted)
    total_pos = pos_cum[-1]

    left_n = np.arange(1, n, dtype=float)
    right_n = n - left_n
    left_pos = pos_cum[:-1].astype(float)
    right_pos = total_pos - left_pos

    valid = x_sorted[1:] != x_sorted[:-1]
    if not valid.any():
        return None

    p_left = left_pos / left_n
    p_right = right_pos / right_n
    gini = (left_n * 2.0 * p_left * (1.0 - p_left)
            + right_n * 2.0 * p_right * (1.0 - p_right)) / n
    gini[~valid] = np.inf
    best = int(np.argmin(gini))
    threshold = (x_sorted[best] + x_sorted[best + 1]) / 2.0
    return float(gini[best]), threshold


@dataclass
class _Tree:
    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)  # P(class 1) at leaves

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def grow(self, X: np.ndarray, y: np.ndarray, idx: np.ndarray, depth: int,
             max_depth: int, n_candidates: int, rng: np.random.Generator) -> int:
        node = self.add_node()
        ys = y[idx]
        pos = float(ys.mean())
        if depth >= max_depth or pos == 0.0 or pos == 1.0 or len(idx) < 2:
            self.value[node] = pos
            return node

        n_features = X.shape[1]
        candidates = rng.choice(n_features, size=min(n_candidates, n_features),
                                replace=False)
        best = None
        for f in np.sort(candidates):
            col = X[idx, f]
            order = np.argsort(col, kind="stable")
            scan = _gini_split_scan(col[order], ys[order])
            if scan is None:
                continue
            impurity, threshold = scan
            if best is None or impurity < best[0]:
                best = (impurity, int(f), threshold)

        if best is None:
            self.value[node] = pos
            return node

        _, f, threshold = best
        mask = X[idx, f] <= threshold
        self.feature[node] = f
        self.threshold[node] = threshold
        self.value[node] = pos
        self.left[node] = self.grow(X, y, idx[mask], depth + 1, max_depth,
                                    n_candidates, rng)
        self.right[node] = self.grow(X, y, idx[~mask], depth + 1, max_depth,
                                     n_candidates, rng)
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        feature = np.array(self.feature)
        threshold = np.array(self.threshold)
        left = np.array(self.left)
        right = np.array(self.right)
        value = np.array(self.value)

        node = np.zeros(len(X), dtype=np.int64)
        active = feature[node] >= 0
        while active.any():
            rows = np.nonzero(active)[0]
            cur = node[rows]
            go_left = X[rows, feature[cur]] <= threshold[cur]
            node[rows] = np.where(go_left, left[cur], right[cur])
            active[rows] = feature[node[rows]] >= 0
        return (value[node] >= 0.5).astype(np.int64)

    def to_json(self) -> dict:
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left,
            "right": self.right,
            "value": self.value,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "_Tree":
        return cls(
            feature=[int(v) for v in payload["feature"]],
            threshold=[float(v) for v in payload["threshold"]],
            left=[int(v) for v in payload["left"]],
            right=[int(v) for v in payload["right"]],
            value=[float(v) for v in payload["value"]],
        )


class RandomForest:
    """Majority-vote ensemble of bagged CART trees."""

    def __init__(self, n_trees: int = 100, max_depth: int = 12,
                 feature_fraction: str | float = "sqrt", seed: int = 0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.feature_fraction = feature_fraction
        self.seed = seed
        self.trees: list[_Tree] = []

    def _n_candidates(self, n_features: int) -> int:
        if self.feature_fraction == "sqrt":
            return max(1, int(round(np.sqrt(n_features))))
        return max(1, int(round(float(self.feature_fraction) * n_features)))

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RandomForest":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or len(X) != len(y):
            raise ValueError("X must be 2-D and aligned with y")
        n_candidates = self._n_candidates(X.shape[1])
        seeds = np.random.SeedSequence(self.seed).spawn(self.n_trees)
        self.trees = []
        for tree_seed in seeds:
            rng = np.random.default_rng(tree_seed)
            sample = rng.integers(0, len(X), size=len(X))
            tree = _Tree()
            tree.grow(X, y, sample, 0, self.max_depth, n_candidates, rng)
            self.trees.append(tree)
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        if not self.trees:
            raise ValueError("forest is not fitted")
        X = np.asarray(X, dtype=float)
        votes = np.zeros(len(X), dtype=np.int64)
        for tree in self.trees:
            votes += tree.predict(X)
        return (votes * 2 > len(self.trees)).astype(np.int64)

    def score(self, X: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.predict(X) == np.asarray(y)))

    def to_json(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "feature_fraction": self.feature_fraction,
            "seed": self.seed,
            "trees": [t.to_json() for t in self.trees],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "RandomForest":
        if payload.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported forest format {payload.get('version')}")
        forest = cls(
            n_trees=int(payload["n_trees"]),
            max_depth=int(payload["max_depth"]),
            feature_fraction=payload["feature_fraction"],
            seed=int(payload["seed"]),
        )
        forest.trees = [_Tree.from_json(t) for t in payload["trees"]]
        return forest

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "RandomForest":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))
