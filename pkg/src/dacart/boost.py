"""Gradient-boosted trees with logistic loss, used as the domain classifier.

Each round fits a depth-limited regression tree to the residuals
``W - sigmoid(F)`` (the negative gradient); leaves hold mean residuals.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import _kernels
from .data import Dataset, domain_labels
from .errors import UserError
from .tree import REGRESSION, FitParams, Tree, grow_arrays, tree_from_dict, tree_to_dict

_P_FLOOR = 1e-15


@dataclass(frozen=True)
class BoostParams:
    rounds: int = 100
    learning_rate: float = 0.1
    max_depth: int = 3
    min_node_weight: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if int(self.rounds) < 1:
            raise UserError("rounds must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise UserError("learning_rate must lie in (0, 1]")
        if int(self.max_depth) < 1:
            raise UserError("max_depth must be >= 1")
        if not self.min_node_weight > 0:
            raise UserError("min_node_weight must be > 0")


@dataclass(frozen=True, eq=False)
class BoostedClassifier:
    base_score: float
    trees: list
    learning_rate: float
    feature_names: tuple
    max_depth: int = 3
    train_loss: list = field(default_factory=list)

    @property
    def rounds(self) -> int:
        return len(self.trees)

    def decision_function(self, rows) -> np.ndarray:
        X = _matrix(rows, self.feature_names)
        F = np.full(X.shape[1], self.base_score)
        for t in self.trees:
            F += self.learning_rate * _kernels.predict(t.feature, t.threshold, t.left, t.right, t.value, X)
        return F

    def predict_proba(self, rows) -> np.ndarray:
        return predict_proba(self, rows)


def _matrix(rows, names) -> np.ndarray:
    if isinstance(rows, Dataset):
        return np.ascontiguousarray(rows.feature_matrix(names))
    X = np.ascontiguousarray(rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != len(names):
        raise UserError(f"expected a ({len(names)}, m) feature matrix, got {X.shape}")
    return X


def logistic_loss(labels: np.ndarray, F: np.ndarray) -> float:
    # log(1 + e^F) - y F, stable for large |F|
    return float(np.mean(np.logaddexp(0.0, F) - labels * F))


def predict_proba(model: BoostedClassifier, rows) -> np.ndarray:
    """``sigmoid(base_score + learning_rate * sum of tree outputs)``, kept inside (0, 1)."""
    p = expit(model.decision_function(rows))
    return np.clip(p, _P_FLOOR, 1.0 - _P_FLOOR)


def fit_propensity(z_source: Dataset, z_target: Dataset, params: BoostParams = BoostParams()) -> BoostedClassifier:
    """Fit ``P(W=1 | z)`` with source rows labelled 0 and target rows labelled 1.

    No subsampling is done, so the fit is deterministic; ``params.seed`` is
    carried for interface symmetry only.
    """
    if z_source.n < 1 or z_target.n < 1:
        raise UserError("both domains need at least one row")
    names = tuple(z_source.names)
    Xs = z_source.columns
    Xt = z_target.feature_matrix(names)
    X = np.ascontiguousarray(np.hstack([Xs, Xt]))
    labels = domain_labels(z_source.n, z_target.n)
    n = labels.size

    prior = labels.mean()
    base = float(np.log(prior / (1.0 - prior)))
    F = np.full(n, base)
    ones = np.ones(n)
    cand = np.arange(X.shape[0], dtype=np.int64)
    order = np.argsort(X, axis=1, kind="stable")
    tree_params = FitParams(max_depth=params.max_depth, min_node_weight=params.min_node_weight, prune=False)
    trees = []
    losses = [logistic_loss(labels, F)]
    for _ in range(int(params.rounds)):
        resid = labels - expit(F)
        arrays = grow_arrays(X, resid, ones, cand, tree_params, REGRESSION, order=order)
        t = Tree(*arrays, task=REGRESSION, feature_names=names, params=tree_params)
        F += params.learning_rate * _kernels.predict(t.feature, t.threshold, t.left, t.right, t.value, X)
        trees.append(t)
        losses.append(logistic_loss(labels, F))
    return BoostedClassifier(base, trees, float(params.learning_rate), names, int(params.max_depth), losses)


def to_dict(model: BoostedClassifier) -> dict:
    return {
        "base_score": model.base_score,
        "learning_rate": model.learning_rate,
        "max_depth": model.max_depth,
        "features": list(model.feature_names),
        "trees": [tree_to_dict(t) for t in model.trees],
    }


def from_dict(obj: dict) -> BoostedClassifier:
    return BoostedClassifier(
        float(obj["base_score"]),
        [tree_from_dict(t) for t in obj["trees"]],
        float(obj["learning_rate"]),
        tuple(obj["features"]),
        int(obj.get("max_depth", 3)),
    )
