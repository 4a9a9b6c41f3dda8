import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dacart import tree as cart
from dacart.data import Dataset
from dacart.errors import UserError
from dacart.pipeline import (
    BaggedModel,
    NoInformativeVariables,
    fit_bagged,
    fit_da_cart,
    model_from_dict,
    model_to_dict,
    predict_model,
    select_from_shares,
    select_variables,
    tree_rng,
    weighted_bootstrap,
)
from dacart.simlab import GeneratorSpec, generate_pool
from dacart.tree import FitParams
from dacart.weights import normalize_weights, true_weights, unit_weights


def _source(seed, n=400):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = 2 * X[:, 0] + np.sin(3 * X[:, 1]) + 0.3 * rng.normal(size=n)
    return Dataset.from_arrays(X, response=y)


def test_prefix_rule_examples():
    assert select_from_shares({"X1": 0.6, "X2": 0.3, "X3": 0.1}) == ["X1", "X2"]
    assert select_from_shares({"X1": 1.0}) == ["X1"]
    assert select_from_shares({"X1": 0.5, "X2": 0.35, "X3": 0.15}) == ["X1", "X2"]
    assert select_from_shares({"a": 0.4, "b": 0.4, "c": 0.2}, 0.5) == ["a", "b"]


def test_select_variables_no_splits():
    d = Dataset.from_arrays({"a": np.arange(40.0)}, response=np.ones(40))
    with pytest.raises(NoInformativeVariables):
        select_variables(d)


def test_selection_on_main_generator():
    hits = 0
    for seed in range(20):
        pool = generate_pool(GeneratorSpec(), 5000, seed)
        sel = select_variables(pool, FitParams(seed=seed))
        hits += "X1" in sel.selected and "X4" not in sel.selected
    assert hits >= 19


def test_selection_permutation_of_features():
    d = _source(1)
    a = select_variables(d)
    b = select_variables(d.select(["X3", "X1", "X2"]))
    assert set(a.selected) == set(b.selected)
    assert a.shares == pytest.approx(b.shares)


def test_unit_estimator_equals_plain_cart():
    d = _source(2)
    m = fit_da_cart(d, None, "unit")
    plain = cart.fit(d, None, m.selection.selected, FitParams())
    assert np.array_equal(m.predict(d), cart.predict(plain, d))


def test_tree_uses_only_selected_features():
    d = _source(3)
    rng = np.random.default_rng(3)
    xt = Dataset.from_arrays(rng.normal(0.5, 1, size=(300, 3)))
    m = fit_da_cart(d, xt, "ew")
    assert m.tree.used_features() <= set(m.selection.selected)
    assert len(m.weights) == d.n


def test_fallback_uses_all_features(caplog):
    d = Dataset.from_arrays({"a": np.arange(40.0), "b": np.arange(40.0)[::-1]}, response=np.ones(40))
    m = fit_da_cart(d, None, "unit")
    assert m.selection.fallback and m.selection.selected == ["a", "b"]
    assert "no splits" in caplog.text


def test_estimator_errors():
    d = _source(4)
    with pytest.raises(UserError):
        fit_da_cart(d, None, "ew")
    with pytest.raises(UserError):
        fit_da_cart(d, None, "true")
    with pytest.raises(UserError):
        fit_da_cart(d, None, "magic")


def test_true_estimator_uses_given_weights():
    d = _source(5)
    tw = true_weights(d.column("X1"), "shifted", 0.0)
    m = fit_da_cart(d, None, "true", true_weights=tw)
    assert m.weights is tw


def test_kliep_estimator_runs():
    d = _source(6, 300)
    xt = Dataset.from_arrays(np.random.default_rng(6).normal(size=(300, 3)))
    m = fit_da_cart(d, xt, "kliep", weight_features=["X1"])
    assert m.weights.source_estimator == "kliep" and m.weight_features == ["X1"]


def test_single_leaf_model_predicts_constant():
    d = Dataset.from_arrays({"a": np.arange(40.0)}, response=np.full(40, 1.25))
    m = fit_da_cart(d, None, "unit")
    assert np.all(predict_model(m, d) == 1.25)


# ---------------------------------------------------------------- bagging


def test_one_tree_is_one_bootstrap_tree():
    d = _source(7, 200)
    p = FitParams(prune=False)
    bag = fit_bagged(d, "naive", None, 1, p, seed=11)
    idx = weighted_bootstrap(np.ones(d.n), tree_rng(11, 0))
    direct = cart.grow(d.take(idx), None, None, p)
    assert np.array_equal(bag.predict(d), cart.predict(direct, d))


def test_unit_weight_bootstrap_equals_naive():
    d = _source(8, 200)
    a = fit_bagged(d, "naive", None, 5, seed=3)
    b = fit_bagged(d, "da_bootstrap", unit_weights(d.n), 5, seed=3)
    assert np.array_equal(a.predict(d), b.predict(d))


def test_bagged_prediction_is_member_mean():
    d = _source(9, 200)
    bag = fit_bagged(d, "da_split", normalize_weights(np.linspace(0.5, 2, 200)), 7, seed=1)
    members = bag.member_predictions(d)
    assert np.array_equal(bag.predict(d), members.mean(axis=0))
    same = BaggedModel([bag.trees[0]] * 3)
    assert np.allclose(same.predict(d), cart.predict(bag.trees[0], d), rtol=1e-15)


def test_bagging_parallel_equals_serial():
    d = _source(10, 200)
    w = normalize_weights(np.linspace(0.1, 3, 200))
    a = fit_bagged(d, "da_bootstrap", w, 8, seed=5, n_jobs=1)
    b = fit_bagged(d, "da_bootstrap", w, 8, seed=5, n_jobs=4)
    assert np.array_equal(a.predict(d), b.predict(d))


def test_bagging_errors():
    d = _source(11, 50)
    with pytest.raises(UserError):
        fit_bagged(d, "da_split", None)
    with pytest.raises(UserError):
        fit_bagged(d, "bogus")
    with pytest.raises(UserError):
        fit_bagged(d, "naive", None, 0)


def test_bootstrap_frequencies_follow_weights():
    w = np.array([0.2, 0.5, 1.0, 1.3, 2.0, 0.0, 1.0])
    p = w / w.sum()
    n, draws = len(w), 10_000
    counts = np.zeros(n)
    for i in range(draws):
        counts += np.bincount(weighted_bootstrap(w, tree_rng(99, i)), minlength=n)
    total = draws * n
    se = np.sqrt(total * p * (1 - p))
    assert counts[5] == 0
    assert np.all(np.abs(counts - total * p) <= 3 * se + 1e-9)


def test_ensemble_mse_at_most_member_mean():
    d = _source(12, 300)
    bag = fit_bagged(d, "naive", None, 10, seed=2)
    members = bag.member_predictions(d)
    member_mse = ((members - d.response) ** 2).mean(axis=1)
    ens_mse = ((bag.predict(d) - d.response) ** 2).mean()
    assert members.var(axis=0).min() >= 0
    assert ens_mse <= member_mse.mean() + 1e-12


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6))
def test_unit_parity_property(seed):
    d = _source(seed, 200)
    m = fit_da_cart(d, None, "unit", FitParams(seed=seed))
    plain = cart.fit(d, None, m.selection.selected, FitParams(seed=seed))
    assert np.array_equal(m.predict(d), cart.predict(plain, d))


# ---------------------------------------------------------------- serialization


def test_model_round_trips():
    d = _source(13, 200)
    xt = Dataset.from_arrays(np.random.default_rng(13).normal(0.3, 1, size=(200, 3)))
    models = [cart.fit(d), fit_da_cart(d, xt, "ew"), fit_bagged(d, "naive", None, 3)]
    for m in models:
        back = model_from_dict(model_to_dict(m))
        assert np.array_equal(predict_model(back, d), predict_model(m, d))
    with pytest.raises(UserError):
        model_from_dict({"kind": "forest"})
    with pytest.raises(UserError):
        predict_model(object(), d)
