"""DA-CART end to end, gain-based variable selection and bagged trees.

DA-CART runs three steps: select outcome-predictive features from a pruned
CART on the source rows, estimate importance weights for the source rows
from those features, then grow and prune a weighted CART on them.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import tree as cart
from .boost import BoostedClassifier, BoostParams, fit_propensity
from .data import Dataset
from .errors import NumericalError, UserError
from .tree import REGRESSION, FitParams, Tree
from .weights import (
    DEFAULT_TRUNC,
    WeightVector,
    kliep_weights,
    propensity_weights,
    unit_weights,
)

log = logging.getLogger(__name__)

ESTIMATORS = ("ew", "kliep", "true", "unit")
VARIANTS = ("naive", "da_bootstrap", "da_split")


class NoInformativeVariables(NumericalError):
    pass


@dataclass(frozen=True)
class VariableSelection:
    selected: list
    shares: dict
    cumulative_threshold: float = 0.85
    fallback: bool = False


def select_from_shares(shares: dict, threshold: float = 0.85) -> list:
    """Shortest prefix of features, by descending share, whose shares reach ``threshold``.

    Ties keep the input (feature index) order.
    """
    ranked = sorted(shares, key=lambda k: -shares[k])
    out, cum = [], 0.0
    for name in ranked:
        if shares[name] <= 0:
            break
        out.append(name)
        cum += shares[name]
        if cum >= threshold - 1e-12:
            break
    return out


def selection_from_tree(m1: Tree, threshold: float = 0.85) -> VariableSelection:
    """Selection from an already fitted step-one tree."""
    if not 0 < threshold <= 1:
        raise UserError("selection threshold must lie in (0, 1]")
    if m1.n_leaves == 1:
        raise NoInformativeVariables("no informative variables: the selection tree has no splits")
    shares = dict(zip(m1.feature_names, cart.gain_importance(m1)))
    return VariableSelection(select_from_shares(shares, threshold), shares, threshold)


def select_variables(
    d_source: Dataset, params: FitParams = FitParams(), threshold: float = 0.85, task: str = REGRESSION
) -> VariableSelection:
    """Fit a pruned, unweighted CART on all features and select by gain share."""
    m1 = cart.fit(d_source, np.ones(d_source.n), None, params, task)
    return selection_from_tree(m1, threshold)


def fallback_selection(names, threshold: float = 0.85) -> VariableSelection:
    log.warning("selection tree has no splits; using all features")
    return VariableSelection(list(names), {k: 0.0 for k in names}, threshold, True)


@dataclass(frozen=True, eq=False)
class DaCartModel:
    selection: VariableSelection
    estimator: str
    weight_features: list
    weights: WeightVector
    tree: Tree
    weight_model: BoostedClassifier | None = None

    def predict(self, rows) -> np.ndarray:
        return cart.predict(self.tree, rows)


def estimate_weights(
    d_source: Dataset,
    x_target: Dataset | None,
    estimator: str,
    features: list,
    boost: BoostParams = BoostParams(),
    trunc=DEFAULT_TRUNC,
    true_weights: WeightVector | None = None,
    seed: int = 0,
):
    """Step two: ``(WeightVector, fitted domain classifier or None)``."""
    if estimator == "unit":
        return unit_weights(d_source.n), None
    if estimator == "true":
        if true_weights is None or len(true_weights) != d_source.n:
            raise UserError("estimator 'true' needs a true-mechanism WeightVector over the source rows")
        return true_weights, None
    if x_target is None:
        raise UserError(f"estimator {estimator!r} needs target rows")
    zs = d_source.select(features)
    zt = x_target.select(features)
    if estimator == "ew":
        model = fit_propensity(zs, zt, boost)
        return propensity_weights(model.predict_proba(zs), trunc), model
    if estimator == "kliep":
        return kliep_weights(zs, zt, seed=seed), None
    raise UserError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}")


def fit_da_cart(
    d_source: Dataset,
    x_target: Dataset | None,
    estimator: str = "ew",
    params: FitParams = FitParams(),
    *,
    threshold: float = 0.85,
    weight_features: list | None = None,
    boost: BoostParams = BoostParams(),
    trunc=DEFAULT_TRUNC,
    true_weights: WeightVector | None = None,
    selection: VariableSelection | None = None,
    task: str = REGRESSION,
) -> DaCartModel:
    """Fit DA-CART.

    Parameters
    ----------
    d_source : Dataset
        Labelled source rows.
    x_target : Dataset or None
        Unlabelled target rows (needed by ``ew`` and ``kliep``).
    estimator : {"ew", "kliep", "true", "unit"}
        Propensity odds from boosted trees, KLIEP, supplied true weights, or
        no weighting.
    weight_features : list of str, optional
        Features for the weight model; defaults to the selected features.
    selection : VariableSelection, optional
        Reuse an earlier step-one result instead of refitting it.
    """
    if estimator not in ESTIMATORS:
        raise UserError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}")
    if selection is None:
        try:
            selection = select_variables(d_source, params, threshold, task)
        except NoInformativeVariables:
            selection = fallback_selection(d_source.names, threshold)
    wf = list(weight_features) if weight_features else list(selection.selected)
    weights, model = estimate_weights(d_source, x_target, estimator, wf, boost, trunc, true_weights, params.seed)
    m3 = cart.fit(d_source, weights.values, selection.selected, params, task)
    return DaCartModel(selection, estimator, wf, weights, m3, model)


# ---------------------------------------------------------------- bagging


def tree_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for ensemble member ``index``: ``SeedSequence([seed, index])``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def weighted_bootstrap(sample_weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws with replacement, row ``i`` drawn with probability ``w_i / sum(w)``.

    Inverse-CDF sampling on uniform draws; with equal weights this is the
    ordinary bootstrap for the same generator state.
    """
    n = sample_weights.size
    cdf = np.cumsum(sample_weights)
    u = rng.random(n)
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    return np.minimum(idx, n - 1)


@dataclass(frozen=True, eq=False)
class BaggedModel:
    trees: list
    variant: str = "naive"
    weights: WeightVector | None = None
    seed: int = 0
    selection: VariableSelection | None = None

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def member_predictions(self, rows) -> np.ndarray:
        return np.array([cart.predict(t, rows) for t in self.trees])

    def predict(self, rows) -> np.ndarray:
        return self.member_predictions(rows).mean(axis=0)


def _fit_member(d, variant, w, candidates, params, task, seed, i):
    rng = tree_rng(seed, i)
    probs = w if variant == "da_bootstrap" else np.ones(d.n)
    idx = weighted_bootstrap(probs, rng)
    sample = d.take(idx)
    member_w = w[idx] if variant == "da_split" else np.ones(d.n)
    return cart.grow(sample, member_w, candidates, params, task)


def fit_bagged(
    d_train: Dataset,
    variant: str = "naive",
    weights: WeightVector | None = None,
    n_trees: int = 100,
    params: FitParams = FitParams(prune=False),
    seed: int = 0,
    candidates: list | None = None,
    task: str = REGRESSION,
    n_jobs: int = 1,
) -> BaggedModel:
    """Bagged unpruned trees.

    naive: uniform bootstrap, unweighted splits. da_bootstrap: bootstrap
    draws proportional to ``weights``, unweighted splits. da_split: uniform
    bootstrap, each drawn row keeps its importance weight in the split
    criterion.
    """
    if variant not in VARIANTS:
        raise UserError(f"unknown bagging variant {variant!r}; expected one of {VARIANTS}")
    if variant != "naive" and weights is None:
        raise UserError(f"variant {variant!r} requires importance weights")
    if int(n_trees) < 1:
        raise UserError("n_trees must be >= 1")
    w = np.ones(d_train.n) if weights is None else np.asarray(weights.values, dtype=np.float64)
    if w.size != d_train.n:
        raise UserError("weights length does not match the training rows")

    def member(i):
        return _fit_member(d_train, variant, w, candidates, params, task, seed, i)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            trees = list(pool.map(member, range(n_trees)))
    else:
        trees = [member(i) for i in range(n_trees)]
    return BaggedModel(trees, variant, weights, seed)


def predict_model(m, rows) -> np.ndarray:
    """Predictions of a fitted :class:`DaCartModel`, :class:`BaggedModel` or plain Tree."""
    if isinstance(m, Tree):
        return cart.predict(m, rows)
    if isinstance(m, (DaCartModel, BaggedModel)):
        return m.predict(rows)
    raise UserError(f"cannot predict with {type(m).__name__}")


# ---------------------------------------------------------------- serialization


def model_to_dict(m) -> dict:
    if isinstance(m, Tree):
        return {"kind": "cart", "tree": cart.tree_to_dict(m)}
    if isinstance(m, DaCartModel):
        return {
            "kind": "da-cart",
            "estimator": m.estimator,
            "selection": {
                "selected": m.selection.selected,
                "shares": m.selection.shares,
                "threshold": m.selection.cumulative_threshold,
                "fallback": m.selection.fallback,
            },
            "weight_features": m.weight_features,
            "weights": m.weights.summary(),
            "tree": cart.tree_to_dict(m.tree),
        }
    if isinstance(m, BaggedModel):
        return {
            "kind": "bagged",
            "variant": m.variant,
            "seed": m.seed,
            "weights": None if m.weights is None else m.weights.summary(),
            "trees": [cart.tree_to_dict(t) for t in m.trees],
        }
    raise UserError(f"cannot serialize {type(m).__name__}")


def model_from_dict(obj: dict):
    kind = obj.get("kind")
    if kind == "cart":
        return cart.tree_from_dict(obj["tree"])
    if kind == "da-cart":
        sel = obj["selection"]
        selection = VariableSelection(sel["selected"], sel["shares"], sel["threshold"], sel.get("fallback", False))
        placeholder = WeightVector(np.empty(0), obj["weights"]["estimator"])
        return DaCartModel(
            selection, obj["estimator"], obj["weight_features"], placeholder, cart.tree_from_dict(obj["tree"])
        )
    if kind == "bagged":
        return BaggedModel([cart.tree_from_dict(t) for t in obj["trees"]], obj["variant"], None, obj.get("seed", 0))
    raise UserError(f"unknown model kind {kind!r}")
