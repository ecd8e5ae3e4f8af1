"""Gradient boosting of shallow regression trees under logistic loss."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError
from .nnet import sigmoid


@dataclass(frozen=True)
class GBCConfig:
    n_trees: int = 200
    max_depth: int = 2
    shrinkage: float = 0.1
    min_samples_leaf: int = 1

    def __post_init__(self):
        if not 0.0 < self.shrinkage <= 1.0:
            raise ConfigError(f"shrinkage must lie in (0, 1], got {self.shrinkage}")
        if self.n_trees < 0 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ConfigError("n_trees >= 0, max_depth >= 1 and min_samples_leaf >= 1 required")


@dataclass
class TreeNode:
    """Internal node when ``feature_index`` is set; leaf with ``value`` otherwise."""

    value: float = 0.0
    feature_index: int | None = None
    split_value: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self.feature_index is None:
            return np.full(x.shape[0], self.value)
        out = np.empty(x.shape[0])
        go_left = x[:, self.feature_index] <= self.split_value
        out[go_left] = self.left.predict(x[go_left])
        out[~go_left] = self.right.predict(x[~go_left])
        return out

    def to_dict(self) -> dict:
        if self.feature_index is None:
            return {"leaf": self.value}
        return {
            "feature_index": self.feature_index,
            "split": self.split_value,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "leaf" in d:
            return cls(value=float(d["leaf"]))
        return cls(
            feature_index=int(d["feature_index"]),
            split_value=float(d["split"]),
            left=cls.from_dict(d["left"]),
            right=cls.from_dict(d["right"]),
        )


@dataclass
class GBCModel:
    base_score: float
    shrinkage: float
    n_features: int
    trees: list[TreeNode] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {x.shape}")
        score = np.full(x.shape[0], self.base_score)
        for tree in self.trees:
            score += self.shrinkage * tree.predict(x)
        return score

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return sigmoid(self.decision_function(x))

    def to_json(self) -> dict:
        return {
            "architecture": "gbc",
            "base_score": self.base_score,
            "shrinkage": self.shrinkage,
            "n_features": self.n_features,
            "trees": [t.to_dict() for t in self.trees],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, doc: dict) -> "GBCModel":
        return cls(
            base_score=float(doc["base_score"]),
            shrinkage=float(doc["shrinkage"]),
            n_features=int(doc["n_features"]),
            trees=[TreeNode.from_dict(t) for t in doc["trees"]],
        )


def logistic_loss(y: np.ndarray, score: np.ndarray) -> float:
    # mean of log(1 + e^s) - y s, computed stably
    return float(np.mean(np.logaddexp(0.0, score) - y * score))


def _best_split(x_sorted: np.ndarray, r_sorted: np.ndarray, min_leaf: int):
    """Best variance-reduction split over all features of one node.

    ``x_sorted``/``r_sorted`` are (D, n): each row holds the node's values
    of one feature in ascending order with residuals aligned. Returns
    ``(gain, feature, split_value)`` or ``None``.
    """
    D, n = x_sorted.shape
    if n < 2 * min_leaf:
        return None
    csum = np.cumsum(r_sorted, axis=1)
    total = csum[:, -1:]
    n_left = np.arange(1, n)
    left = csum[:, :-1]
    right = total - left
    # gain of splitting after position i (left = first i+1 samples), parent term dropped
    gain = left**2 / n_left + right**2 / (n - n_left)
    valid = x_sorted[:, 1:] > x_sorted[:, :-1]
    if min_leaf > 1:
        valid &= (n_left >= min_leaf) & (n - n_left >= min_leaf)
    if not valid.any():
        return None
    gain = np.where(valid, gain, -np.inf)
    parent = total[0, 0] ** 2 / n
    # argmax takes the first maximum: lowest feature, then lowest split value
    flat = int(np.argmax(gain))
    f, i = divmod(flat, n - 1)
    if gain[f, i] <= parent + 1e-12 * max(1.0, abs(parent)):
        return None
    split = 0.5 * (x_sorted[f, i] + x_sorted[f, i + 1])
    return gain[f, i] - parent, f, float(split)


def _fit_tree(x: np.ndarray, residual: np.ndarray, order: np.ndarray, cfg: GBCConfig) -> TreeNode:
    D = x.shape[1]

    def grow(rows_sorted: np.ndarray, depth: int) -> TreeNode:
        # rows_sorted: (D, n) sample indices of this node, sorted per feature
        node_rows = rows_sorted[0]
        leaf = TreeNode(value=float(residual[node_rows].mean()))
        if depth >= cfg.max_depth:
            return leaf
        xs = x[rows_sorted, np.arange(D)[:, None]]
        found = _best_split(xs, residual[rows_sorted], cfg.min_samples_leaf)
        if found is None:
            return leaf
        _, f, split = found
        go_left = np.zeros(x.shape[0], dtype=bool)
        go_left[node_rows[x[node_rows, f] <= split]] = True
        n_left = int(go_left[node_rows].sum())
        in_left = go_left[rows_sorted]
        left_rows = rows_sorted[in_left].reshape(D, n_left)
        right_rows = rows_sorted[~in_left].reshape(D, node_rows.size - n_left)
        return TreeNode(
            feature_index=int(f),
            split_value=split,
            left=grow(left_rows, depth + 1),
            right=grow(right_rows, depth + 1),
        )

    return grow(order, 0)


def gbc_fit(x: np.ndarray, y: np.ndarray, config: GBCConfig = GBCConfig(), seed: int = 0) -> GBCModel:
    """Stagewise boosting: each tree fits the residual ``y - p`` of the current model.

    Split search is exact and greedy, so fitting is deterministic; ``seed``
    is accepted for interface symmetry with the networks.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError(f"shape mismatch: x {x.shape}, y {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("labels must be binary")
    rate = y.mean()
    if rate in (0.0, 1.0):
        raise ValidationError("gradient boosting needs both classes in the training data")
    base = float(np.log(rate / (1 - rate)))
    model = GBCModel(base_score=base, shrinkage=config.shrinkage, n_features=x.shape[1])
    order = np.argsort(x, axis=0, kind="mergesort").T.copy()  # (D, n)
    score = np.full(y.size, base)
    model.train_loss.append(logistic_loss(y, score))
    for _ in range(config.n_trees):
        residual = y - sigmoid(score)
        tree = _fit_tree(x, residual, order, config)
        model.trees.append(tree)
        score += config.shrinkage * tree.predict(x)
        model.train_loss.append(logistic_loss(y, score))
    return model


def gbc_predict_proba(model: GBCModel, x: np.ndarray) -> np.ndarray:
    return model.predict_proba(x)
