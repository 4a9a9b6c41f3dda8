"""Importance-weighted CART.

Split search maximizes the decrease in weighted squared error (regression)
or weighted Gini impurity mass (classification). Among equal gains the
smallest feature index wins, then the smallest threshold. Thresholds are
midpoints between consecutive distinct values and rows go left iff
``x <= threshold``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _kernels
from .data import Dataset
from .errors import NumericalError, UserError

REGRESSION = "regression"
CLASSIFICATION = "classification"

# weighted Gini mass W*2p(1-p) is twice the weighted SSE of a 0/1 response
_GAIN_SCALE = {REGRESSION: 1.0, CLASSIFICATION: 2.0}


@dataclass(frozen=True)
class FitParams:
    max_depth: int = 30
    min_node_weight: float = 10.0
    min_gain: float = 0.0
    prune: bool = True
    cv_folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if int(self.max_depth) < 1:
            raise UserError("max_depth must be >= 1")
        if not self.min_node_weight > 0:
            raise UserError("min_node_weight must be > 0")
        if not self.min_gain >= 0:
            raise UserError("min_gain must be >= 0")
        if int(self.cv_folds) < 2:
            raise UserError("cv_folds must be >= 2")


@dataclass(frozen=True)
class SplitChoice:
    feature: int
    threshold: float
    criterion_gain: float


@dataclass(frozen=True)
class Leaf:
    value: float
    weight_mass: float
    count: int


@dataclass(frozen=True)
class Internal:
    split: SplitChoice
    left: "Leaf | Internal"
    right: "Leaf | Internal"
    value: float
    weight_mass: float
    count: int


@dataclass(frozen=True, eq=False)
class Tree:
    """A fitted tree in flat-array form.

    Feature indices refer to ``feature_names``; prediction looks columns up
    by name, so the rows passed in may carry extra columns in any order.
    ``value``, ``weight`` and ``count`` are kept for internal nodes as well
    (pruning needs them).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    weight: np.ndarray
    count: np.ndarray
    gain: np.ndarray
    risk: np.ndarray
    task: str
    feature_names: tuple
    params: FitParams = field(default_factory=FitParams)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for t in range(self.n_nodes):
            if self.feature[t] >= 0:
                depth[self.left[t]] = depth[self.right[t]] = depth[t] + 1
        return int(depth.max())

    def used_features(self) -> set[str]:
        return {self.feature_names[f] for f in self.feature[self.feature >= 0]}

    def node(self, t: int = 0):
        """Nested :class:`Leaf` / :class:`Internal` view of the subtree at ``t``."""
        if self.feature[t] < 0:
            return Leaf(float(self.value[t]), float(self.weight[t]), int(self.count[t]))
        return Internal(
            SplitChoice(int(self.feature[t]), float(self.threshold[t]), float(self.gain[t])),
            self.node(int(self.left[t])),
            self.node(int(self.right[t])),
            float(self.value[t]),
            float(self.weight[t]),
            int(self.count[t]),
        )

    @property
    def root(self):
        return self.node(0)

    def leaf_ids(self, X: np.ndarray) -> np.ndarray:
        """Leaf id reached by each column of the ``(p, m)`` matrix ``X``."""
        out = np.empty(X.shape[1], dtype=np.int64)
        for i in range(X.shape[1]):
            t = 0
            while self.feature[t] >= 0:
                t = self.left[t] if X[self.feature[t], i] <= self.threshold[t] else self.right[t]
            out[i] = t
        return out


def _as_weights(d: Dataset, w) -> np.ndarray:
    if w is None:
        w = d.row_weights if d.row_weights is not None else np.ones(d.n)
    w = np.asarray(getattr(w, "values", w), dtype=np.float64)
    if w.shape != (d.n,):
        raise UserError(f"weight vector has length {w.shape[0]}, dataset has {d.n} rows")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise UserError("weights must be finite and non-negative")
    return np.ascontiguousarray(w)


def _check_task(task: str, y: np.ndarray):
    if task not in _GAIN_SCALE:
        raise UserError(f"unknown task {task!r}")
    if task == CLASSIFICATION and not np.all((y == 0.0) | (y == 1.0)):
        raise UserError("classification requires a 0/1 response")


def _candidate_array(d: Dataset, candidates) -> np.ndarray:
    if candidates is None:
        return np.arange(d.p, dtype=np.int64)
    out = []
    for c in candidates:
        out.append(d.index_of(c) if isinstance(c, str) else int(c))
    out = np.array(sorted(set(out)), dtype=np.int64)
    if out.size and (out[0] < 0 or out[-1] >= d.p):
        raise UserError("candidate feature index out of range")
    return out


def grow_arrays(X, y, w, candidates, params: FitParams, task: str, order=None):
    """Grow on raw arrays; ``order`` may hold precomputed per-candidate argsorts."""
    if order is None:
        order = np.argsort(X[candidates], axis=1, kind="stable") if len(candidates) else np.empty((0, len(y)), np.int64)
    return _kernels.build_tree(
        X,
        y,
        w,
        np.ascontiguousarray(order, dtype=np.int64),
        candidates,
        int(params.max_depth),
        float(params.min_node_weight),
        float(params.min_gain),
        _GAIN_SCALE[task],
    )


def grow(
    d: Dataset,
    w=None,
    candidates: Sequence | None = None,
    params: FitParams = FitParams(),
    task: str = REGRESSION,
) -> Tree:
    """Grow an unpruned weighted tree.

    Parameters
    ----------
    d : Dataset
        Training rows; must carry a response.
    w : array-like or WeightVector, optional
        Non-negative row weights. Defaults to ``d.row_weights`` or ones.
    candidates : sequence of int or str, optional
        Features eligible for splitting (default: all).
    params : FitParams
        Stopping rules. ``prune`` is ignored here.
    task : {"regression", "classification"}
    """
    if d.n < 1:
        raise UserError("cannot grow a tree on an empty dataset")
    if d.response is None:
        raise UserError("training data has no response")
    y = np.ascontiguousarray(d.response)
    _check_task(task, y)
    w = _as_weights(d, w)
    if not w.sum() > 0:
        raise NumericalError("weights sum to zero")
    cand = _candidate_array(d, candidates)
    arrays = grow_arrays(d.columns, y, w, cand, params, task)
    return Tree(*arrays, task=task, feature_names=tuple(d.names), params=params)


def best_split(
    d: Dataset,
    w=None,
    candidates: Sequence | None = None,
    task: str = REGRESSION,
    rows=None,
    min_node_weight: float = 10.0,
    min_gain: float = 0.0,
) -> SplitChoice | None:
    """Best admissible split of the node holding ``rows`` (default: all rows), or None."""
    if rows is not None:
        sub = d.take(rows)
        w = None if w is None else np.asarray(getattr(w, "values", w))[np.asarray(rows)]
        d = sub
    params = FitParams(max_depth=1, min_node_weight=min_node_weight, min_gain=min_gain)
    t = grow(d, w, candidates, params, task)
    if t.feature[0] < 0:
        return None
    return SplitChoice(int(t.feature[0]), float(t.threshold[0]), float(t.gain[0]))


def predict(t: Tree, rows: Dataset | np.ndarray) -> np.ndarray:
    """Leaf values for each row (regression mean or class-1 probability)."""
    X = _matrix_for(t, rows)
    if X.shape[1] == 0:
        return np.empty(0)
    return _kernels.predict(t.feature, t.threshold, t.left, t.right, t.value, X)


def _matrix_for(t: Tree, rows) -> np.ndarray:
    if isinstance(rows, Dataset):
        return np.ascontiguousarray(rows.feature_matrix(t.feature_names))
    X = np.ascontiguousarray(rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != len(t.feature_names):
        raise UserError(f"expected a ({len(t.feature_names)}, m) feature matrix, got {X.shape}")
    return X


# ---------------------------------------------------------------- pruning


@dataclass(frozen=True)
class PruneReport:
    alphas: np.ndarray
    cv_loss: np.ndarray
    cv_se: np.ndarray
    n_leaves: np.ndarray
    best_index: int
    chosen_index: int

    @property
    def chosen_alpha(self) -> float:
        return float(self.alphas[self.chosen_index])


def cost_complexity_path(t: Tree):
    """``(collapse, alphas)``: per-node collapse penalties and the distinct
    penalties, starting at 0."""
    collapse, alphas = _kernels.weakest_link(t.left, t.right, t.risk)
    if alphas.size == 0 or alphas[0] > 0:
        alphas = np.concatenate([[0.0], alphas])
    return collapse, alphas


def prune_at(t: Tree, alpha: float, collapse=None) -> Tree:
    """The minimal cost-complexity subtree of ``t`` for penalty ``alpha``."""
    if collapse is None:
        collapse, _ = cost_complexity_path(t)
    keep = []
    new_left, new_right = [], []
    is_leaf = []

    def visit(u):
        me = len(keep)
        keep.append(u)
        new_left.append(-1)
        new_right.append(-1)
        leaf = t.feature[u] < 0 or collapse[u] <= alpha
        is_leaf.append(leaf)
        if not leaf:
            new_left[me] = visit(int(t.left[u]))
            new_right[me] = visit(int(t.right[u]))
        return me

    visit(0)
    keep = np.array(keep, dtype=np.int64)
    leaf = np.array(is_leaf)
    feature = np.where(leaf, -1, t.feature[keep])
    return Tree(
        feature,
        np.where(leaf, 0.0, t.threshold[keep]),
        np.array(new_left, dtype=np.int64),
        np.array(new_right, dtype=np.int64),
        t.value[keep].copy(),
        t.weight[keep].copy(),
        t.count[keep].copy(),
        np.where(leaf, 0.0, t.gain[keep]),
        t.risk[keep].copy(),
        task=t.task,
        feature_names=t.feature_names,
        params=t.params,
    )


def _leaves_at(t: Tree, collapse, alphas) -> np.ndarray:
    """Leaf count of the pruned subtree at each penalty in ``alphas``."""
    parent = np.full(t.n_nodes, -1)
    internal = np.flatnonzero(t.feature >= 0)
    parent[t.left[internal]] = internal
    parent[t.right[internal]] = internal
    parent_collapse = np.where(parent >= 0, collapse[np.maximum(parent, 0)], np.inf)
    a = np.asarray(alphas)[:, None]
    reachable = parent_collapse[None, :] > a
    stops = (t.feature[None, :] < 0) | (collapse[None, :] <= a)
    return np.sum(reachable & stops, axis=1)


def fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    """Simple random fold assignment of sizes differing by at most one."""
    perm = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=np.int64)
    ids[perm] = np.arange(n) % folds
    return ids


def prune(
    t: Tree,
    d: Dataset,
    w=None,
    cv_folds: int | None = None,
    seed: int | None = None,
    candidates: Sequence | None = None,
    return_report: bool = False,
):
    """Cost-complexity pruning with the penalty picked by weighted K-fold CV and the 1-SE rule.

    Each fold grows a tree with ``t.params`` on the remaining rows and
    scores the held-out rows by weighted squared error at the geometric
    midpoints of the main tree's penalty sequence. The largest penalty whose
    CV loss is within one standard error of the minimum is applied to ``t``.

    ``candidates`` must match the features ``t`` was grown with (default:
    all features of ``d``).
    """
    cv_folds = t.params.cv_folds if cv_folds is None else int(cv_folds)
    seed = t.params.seed if seed is None else int(seed)
    collapse, alphas = cost_complexity_path(t)
    leaves = _leaves_at(t, collapse, alphas)
    if t.n_leaves == 1 or len(alphas) == 1:
        report = PruneReport(alphas, np.zeros(1), np.zeros(1), leaves[:1], 0, 0)
        return (t, report) if return_report else t

    y = np.ascontiguousarray(d.response)
    w = _as_weights(d, w)
    X = d.columns
    cand = _candidate_array(d, candidates)
    n = d.n
    cv_folds = min(cv_folds, n)
    # representative penalty for each interval [alpha_k, alpha_k+1)
    beta = np.sqrt(alphas * np.append(alphas[1:], np.inf))
    beta[-1] = np.inf
    ids = fold_ids(n, cv_folds, seed)
    sq_err = np.zeros((len(alphas), n))
    for k in range(cv_folds):
        train = np.flatnonzero(ids != k)
        test = np.flatnonzero(ids == k)
        wt = w[train]
        if not wt.sum() > 0:
            sq_err[:, test] = 0.0
            continue
        arrays = grow_arrays(
            np.ascontiguousarray(X[:, train]), y[train], np.ascontiguousarray(wt), cand, t.params, t.task
        )
        ft = Tree(*arrays, task=t.task, feature_names=t.feature_names, params=t.params)
        f_collapse, _ = cost_complexity_path(ft)
        pred = _kernels.predict_pruned(
            ft.feature, ft.threshold, ft.left, ft.right, ft.value, f_collapse, beta,
            np.ascontiguousarray(X[:, test]),
        )
        sq_err[:, test] = (pred - y[test]) ** 2

    total_w = w.sum()
    per_row = sq_err * (w * (n / total_w))
    cv_loss = per_row.mean(axis=1)
    cv_se = per_row.std(axis=1, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(len(alphas))
    best = int(np.argmin(cv_loss))
    limit = cv_loss[best] + cv_se[best]
    chosen = int(max(j for j in range(len(alphas)) if cv_loss[j] <= limit))
    pruned = prune_at(t, alphas[chosen], collapse)
    report = PruneReport(alphas, cv_loss, cv_se, leaves, best, chosen)
    return (pruned, report) if return_report else pruned


def fit(
    d: Dataset,
    w=None,
    candidates: Sequence | None = None,
    params: FitParams = FitParams(),
    task: str = REGRESSION,
) -> Tree:
    """Grow, then prune when ``params.prune`` is set."""
    t = grow(d, w, candidates, params, task)
    if params.prune:
        t = prune(t, d, w, params.cv_folds, params.seed, candidates)
    return t


def gain_importance(t: Tree) -> np.ndarray:
    """Per-feature share of total split gain; all zeros for a single leaf."""
    shares = np.zeros(len(t.feature_names))
    internal = t.feature >= 0
    np.add.at(shares, t.feature[internal], t.gain[internal])
    total = shares.sum()
    return shares / total if total > 0 else shares


# ---------------------------------------------------------------- serialization


def _node_dict(t: Tree, u: int) -> dict:
    base = {"value": float(t.value[u]), "weight": float(t.weight[u]), "count": int(t.count[u])}
    if t.feature[u] < 0:
        return {"leaf": base | {"risk": float(t.risk[u])}}
    return {
        "feature": t.feature_names[t.feature[u]],
        "threshold": float(t.threshold[u]),
        "gain": float(t.gain[u]),
        "risk": float(t.risk[u]),
        **base,
        "left": _node_dict(t, int(t.left[u])),
        "right": _node_dict(t, int(t.right[u])),
    }


def tree_to_dict(t: Tree) -> dict:
    return {
        "task": t.task,
        "features": list(t.feature_names),
        "params": asdict(t.params),
        "root": _node_dict(t, 0),
    }


def tree_from_dict(obj: dict) -> Tree:
    names = tuple(obj["features"])
    cols = {k: [] for k in ("feature", "threshold", "left", "right", "value", "weight", "count", "gain", "risk")}

    def add(node):
        me = len(cols["feature"])
        for k in cols:
            cols[k].append(0)
        if "leaf" in node:
            leaf = node["leaf"]
            cols["feature"][me] = -1
            cols["left"][me] = cols["right"][me] = -1
            cols["value"][me] = leaf["value"]
            cols["weight"][me] = leaf["weight"]
            cols["count"][me] = leaf["count"]
            cols["risk"][me] = leaf.get("risk", 0.0)
            cols["threshold"][me] = cols["gain"][me] = 0.0
            return me
        cols["feature"][me] = names.index(node["feature"])
        for k in ("threshold", "gain", "risk", "value", "weight", "count"):
            cols[k][me] = node[k]
        cols["left"][me] = add(node["left"])
        cols["right"][me] = add(node["right"])
        return me

    add(obj["root"])
    ints = {"feature", "left", "right", "count"}
    arrays = [np.array(cols[k], dtype=np.int64 if k in ints else np.float64) for k in cols]
    return Tree(*arrays, task=obj["task"], feature_names=names, params=FitParams(**obj.get("params", {})))


def dump_tree(t: Tree) -> str:
    """Indented JSON; floats round-trip exactly."""
    return json.dumps(tree_to_dict(t), indent=2)


def load_tree(text: str) -> Tree:
    return tree_from_dict(json.loads(text))


def with_params(t: Tree, **changes) -> Tree:
    return replace(t, params=replace(t.params, **changes))
