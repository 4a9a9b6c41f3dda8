import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from dacart.data import Dataset
from dacart.errors import UserError
from dacart.weights import (
    DegenerateWeightsError,
    KliepError,
    effective_sample_size,
    fit_kliep,
    gaussian_kernel,
    kliep_weights,
    normalize_weights,
    odds_from_propensity,
    propensity_weights,
    selection_logit,
    true_weights,
    unit_weights,
)


def test_odds_examples():
    assert odds_from_propensity([0.5]).tolist() == [1.0]
    assert odds_from_propensity([0.99]) == pytest.approx([19.0])
    assert odds_from_propensity([0.01]) == pytest.approx([1 / 19])


def test_bad_trunc_interval():
    for trunc in [(0.5, 0.5), (0.0, 0.9), (0.2, 1.0), (0.9, 0.1)]:
        with pytest.raises(UserError):
            odds_from_propensity([0.5], trunc)


def test_bad_propensities():
    with pytest.raises(UserError):
        odds_from_propensity([1.2])
    with pytest.raises(UserError):
        odds_from_propensity([np.nan])


def test_normalize_examples():
    assert normalize_weights([2, 2]).values.tolist() == [1.0, 1.0]
    assert normalize_weights([1, 3]).values.tolist() == [0.5, 1.5]
    a = np.array([0.3, 1.7, 2.2])
    assert np.allclose(normalize_weights(7.5 * a).values, normalize_weights(a).values, rtol=1e-15)


def test_normalize_errors():
    with pytest.raises(DegenerateWeightsError):
        normalize_weights([0.0, 0.0])
    with pytest.raises(UserError):
        normalize_weights([1.0, -1.0])
    with pytest.raises(UserError):
        normalize_weights([])


def test_true_weight_examples():
    r = true_weights([0.0], "restricted", 0.0)
    assert r.raw == pytest.approx([np.e**2])
    s = true_weights([3.0], "shifted", 3.0)
    assert s.raw.tolist() == [1.0]
    c = true_weights([5.0], "shifted", 0.0)
    assert c.raw == pytest.approx([19.0], rel=1e-12)
    assert c.trunc_hits == 1


def test_selection_logit_none_and_unknown():
    assert selection_logit([1.0, -2.0], "none", 0.0).tolist() == [0.0, 0.0]
    with pytest.raises(UserError):
        selection_logit([1.0], "sideways", 0.0)


def test_ess_examples():
    assert effective_sample_size(unit_weights(100)) == pytest.approx(100)
    assert effective_sample_size(normalize_weights([2.0, 0.0])) == pytest.approx(1.0)
    assert effective_sample_size(np.array([1.5, 0.5])) == pytest.approx(1.6)


def test_weight_vector_summary():
    wv = propensity_weights([0.01, 0.5, 0.99])
    s = wv.summary()
    assert s["n"] == 3 and s["trunc_hits"] == 2 and s["estimator"] == "propensity_odds"


probs = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=50)


@settings(max_examples=100, deadline=None)
@given(probs)
def test_propensity_weight_invariants(p):
    wv = propensity_weights(p)
    n = len(p)
    assert abs(wv.values.sum() - n) <= 1e-8 * n
    assert np.all(wv.values >= 0)
    assert np.all((wv.raw >= 1 / 19 - 1e-15) & (wv.raw <= 19 + 1e-12))
    assert wv.values.max() / wv.values.min() <= 361 * (1 + 1e-12)
    again = normalize_weights(wv.values)
    assert np.allclose(again.values, wv.values, rtol=1e-12, atol=0)
    ess = wv.ess
    assert ess <= n * (1 + 1e-12)
    if np.ptp(wv.values) == 0:
        assert ess == pytest.approx(n, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-8, 8), min_size=1, max_size=50), st.sampled_from(["restricted", "shifted"]))
def test_true_and_propensity_paths_agree(score, mech):
    score = np.array(score)
    tw = true_weights(score, mech, 0.3)
    ew = propensity_weights(expit(selection_logit(score, mech, 0.3)))
    assert np.allclose(tw.values, ew.values, rtol=1e-10, atol=0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 100), min_size=2, max_size=30))
def test_ess_equality_only_for_equal_weights(w):
    w = np.array(w)
    ess = effective_sample_size(w)
    if np.ptp(w) > 1e-9 * w.max():
        assert ess < len(w)
    assert ess <= len(w) * (1 + 1e-12)


def _z(X):
    X = np.atleast_2d(X)
    return Dataset.from_arrays(X, names=[f"z{j}" for j in range(X.shape[1])])


def test_kliep_same_distribution():
    rng = np.random.default_rng(0)
    zs, zt = _z(rng.normal(size=(1000, 2))), _z(rng.normal(size=(1000, 2)))
    wv = kliep_weights(zs, zt, seed=0)
    assert np.mean(np.abs(wv.values - 1)) <= 0.2
    assert wv.info["constraint_residual"] <= 1e-6


def test_kliep_single_center_closed_form():
    rng = np.random.default_rng(1)
    Xs = rng.normal(size=(300, 1))
    Xt = rng.normal(0.5, 1, size=(1, 1))
    fit = fit_kliep(Xs, Xt, sigma=0.8, n_centers=1)
    k = gaussian_kernel(Xs, Xt, 0.8)[:, 0]
    assert fit.alpha[0] == pytest.approx(len(Xs) / k.sum(), rel=1e-10)


def test_kliep_prefers_target_region():
    rng = np.random.default_rng(2)
    zs, zt = _z(rng.normal(size=(800, 1))), _z(rng.normal(1.0, 0.5, size=(800, 1)))
    wv = kliep_weights(zs, zt, seed=2)
    x = zs.columns[0]
    assert wv.values[x > 1].mean() > wv.values[x < -1].mean()


def test_kliep_schema_mismatch():
    with pytest.raises(UserError):
        kliep_weights(_z(np.zeros((3, 1))), _z(np.zeros((3, 2))))


def test_kliep_constraint_failure_raises():
    rng = np.random.default_rng(3)
    zs, zt = _z(rng.normal(size=(50, 1))), _z(rng.normal(size=(50, 1)))
    with pytest.raises(KliepError):
        kliep_weights(zs, zt, tol=-1.0)
