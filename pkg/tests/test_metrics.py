import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dacart.errors import UserError
from dacart.metrics import auc, kolmogorov_sf, ks_critical_value, ks_two_sample, rmse

from oracles import auc_pairs, ks_steps


def test_rmse_examples():
    assert rmse([1, 2, 3], [1, 2, 3]) == 0.0
    assert rmse([3, 0, 0, 0], [0, 4, 0, 0]) == 2.5
    assert rmse(np.arange(5) + 1.5, np.arange(5)) == pytest.approx(1.5)


def test_rmse_errors():
    with pytest.raises(UserError):
        rmse([1, 2], [1])
    with pytest.raises(UserError):
        rmse([], [])


def test_auc_examples():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.3] * 4, [0, 1, 0, 1]) == 0.5
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auc_single_class():
    with pytest.raises(UserError):
        auc([0.1, 0.2], [1, 1])


def test_ks_examples():
    a = np.random.default_rng(0).normal(size=50)
    assert ks_two_sample(a, a)[0] == 0.0
    assert ks_two_sample(np.linspace(0.1, 0.9, 9), np.linspace(2.1, 2.9, 5))[0] == 1.0
    assert ks_two_sample([1, 2], [1.5])[0] == 0.5


def test_ks_p_value_matches_scipy_asymptotic():
    rng = np.random.default_rng(1)
    for shift in (0.0, 0.05, 0.1, 0.3):
        a, b = rng.normal(size=400), rng.normal(shift, 1, 500)
        stat, p = ks_two_sample(a, b)
        ref = stats.ks_2samp(a, b, method="asymp")
        assert stat == pytest.approx(ref.statistic, abs=1e-15)
        en = 400 * 500 / 900
        assert p == pytest.approx(stats.kstwobign.sf(np.sqrt(en) * stat), abs=1e-10)


def test_kolmogorov_sf_branches_agree():
    for lam in np.linspace(0.2, 3.0, 57):
        assert kolmogorov_sf(lam) == pytest.approx(stats.kstwobign.sf(lam), abs=1e-12)
    assert kolmogorov_sf(0.0) == 1.0


def test_critical_value():
    assert ks_critical_value(5000, 5000) == pytest.approx(1.63 * np.sqrt(2 / 5000))


scores = st.lists(st.integers(0, 6).map(float), min_size=2, max_size=15)


@settings(max_examples=100, deadline=None)
@given(scores, st.randoms())
def test_auc_matches_pair_enumeration(s, rnd):
    labels = [rnd.randint(0, 1) for _ in s]
    labels[0], labels[1] = 0, 1
    assert auc(s, labels) == pytest.approx(auc_pairs(s, labels), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(scores, scores)
def test_ks_matches_step_enumeration(a, b):
    assert ks_two_sample(a, b)[0] == pytest.approx(ks_steps(a, b), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_metrics_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=30), rng.normal(size=30)
    lab = (rng.random(30) < 0.5).astype(int)
    lab[:2] = [0, 1]
    perm = rng.permutation(30)
    assert rmse(x[perm], y[perm]) == pytest.approx(rmse(x, y), rel=1e-14)
    assert auc(x[perm], lab[perm]) == auc(x, lab)
    assert ks_two_sample(x[perm], y[rng.permutation(30)]) == ks_two_sample(x, y)
