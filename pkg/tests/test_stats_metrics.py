import math

import numpy as np
import pytest
import scipy.special
import scipy.stats
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from siamese_eeg import metrics as mt
from siamese_eeg import stats
from siamese_eeg.errors import RejectedInputError

from oracles import f_cdf_quad, t_cdf_quad


# --- incomplete beta and distribution functions ----------------------------

@settings(max_examples=300, deadline=None)
@given(a=st.floats(0.05, 200), b=st.floats(0.05, 200), x=st.floats(0, 1))
def test_betainc_matches_scipy(a, b, x):
    assert stats.betainc(a, b, x) == pytest.approx(scipy.special.betainc(a, b, x), abs=1e-12)


def test_betainc_rejects_bad_arguments():
    with pytest.raises(RejectedInputError):
        stats.betainc(0, 1, 0.5)
    with pytest.raises(RejectedInputError):
        stats.betainc(1, 1, 1.5)


@pytest.mark.parametrize("df", [1, 4, 14, 70])
def test_t_cdf_against_quadrature(df):
    for t in (-6.0, -2.5, -1.0, -0.3, 0.0, 0.2, 0.9, 1.7, 3.1, 8.0):
        assert abs(stats.t_cdf(t, df) - t_cdf_quad(t, df)) < 1e-9


@pytest.mark.parametrize("df", [1, 4, 14, 70])
def test_f_cdf_against_quadrature(df):
    for f in (0.01, 0.2, 0.5, 0.8, 1.0, 1.5, 2.5, 4.0, 7.5, 20.0):
        assert abs(stats.f_cdf(f, df, 12) - f_cdf_quad(f, df, 12)) < 1e-9
        assert abs(stats.f_cdf(f, 3, df) - f_cdf_quad(f, 3, df)) < 1e-9


def test_tails_complement_cdfs():
    for df in (1, 7, 30):
        for t in (-2.0, 0.5, 3.0):
            assert stats.t_sf_two_sided(t, df) == pytest.approx(2 * (1 - stats.t_cdf(abs(t), df)),
                                                                abs=1e-14)
        for f in (0.3, 2.0):
            assert stats.f_sf(f, df, 5) + stats.f_cdf(f, df, 5) == pytest.approx(1.0, abs=1e-14)


def test_distribution_edge_cases():
    assert stats.t_cdf(math.inf, 3) == 1.0
    assert stats.t_cdf(-math.inf, 3) == 0.0
    assert stats.t_sf_two_sided(math.inf, 3) == 0.0
    assert stats.f_cdf(0.0, 2, 3) == 0.0
    assert stats.f_sf(-1.0, 2, 3) == 1.0
    with pytest.raises(RejectedInputError):
        stats.t_cdf(1.0, 0)


# --- ANOVA -----------------------------------------------------------------

def test_anova_hand_computed_table():
    res = stats.one_way_anova([[1, 2, 3], [2, 3, 4], [3, 4, 5]])
    assert abs(res.F - 3.0) < 1e-9
    assert (res.df_between, res.df_within) == (2, 6)
    assert res.p == pytest.approx(0.125, abs=1e-12)
    assert str(res) == "F(2) = 3.00, p = 0.125"


def test_anova_matches_scipy(rng):
    groups = [rng.normal(m, 1.0, n) for m, n in ((0, 5), (0.5, 7), (1.2, 6), (0.1, 9))]
    ours = stats.one_way_anova(groups)
    ref = scipy.stats.f_oneway(*groups)
    assert ours.F == pytest.approx(ref.statistic, rel=1e-12)
    assert ours.p == pytest.approx(ref.pvalue, rel=1e-9)


def test_anova_degenerate_inputs():
    with pytest.raises(RejectedInputError):
        stats.one_way_anova([[2, 2, 2], [2, 2, 2]])
    with pytest.raises(RejectedInputError):
        stats.one_way_anova([[1, 2, 3]])
    with pytest.raises(RejectedInputError):
        stats.one_way_anova([[1], [2, 3]])


@settings(max_examples=200, deadline=None)
@given(a=st.lists(st.floats(-100, 100), min_size=2, max_size=12),
       b=st.lists(st.floats(-100, 100), min_size=2, max_size=12))
def test_two_group_anova_is_squared_t(a, b):
    assume(np.var(a) + np.var(b) > 1e-6)
    f = stats.one_way_anova([a, b]).F
    t = stats.independent_ttest(a, b).t
    assert abs(f - t * t) <= 1e-9 * max(1.0, f)


# --- t-tests ---------------------------------------------------------------

def test_paired_ttest_hand_computed():
    # d = a - b = (-1, -2, -2, 0, -2): mean -1.4, sd sqrt(0.8), se 0.4
    res = stats.paired_ttest([1, 2, 3, 4, 5], [2, 4, 5, 4, 7])
    assert res.t == pytest.approx(-3.5, abs=1e-12)
    assert res.df == 4
    ref = scipy.stats.ttest_rel([1, 2, 3, 4, 5], [2, 4, 5, 4, 7])
    assert res.t == pytest.approx(ref.statistic, abs=1e-12)
    assert res.p == pytest.approx(ref.pvalue, abs=1e-12)


def test_paired_ttest_constant_shift_rejected():
    with pytest.raises(RejectedInputError):
        stats.paired_ttest([1.0, 4.0, 2.0], [1.5, 4.5, 2.5])
    with pytest.raises(RejectedInputError):
        stats.paired_ttest([1.0, 2.0], [1.0, 2.0, 3.0])


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 20))
def test_paired_ttest_antisymmetric(seed, n):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal(n), r.standard_normal(n)
    x, y = stats.paired_ttest(a, b), stats.paired_ttest(b, a)
    assert x.t == -y.t
    assert x.p == y.p
    assert 0.0 <= x.p <= 1.0


def test_independent_ttest_matches_scipy(rng):
    a, b = rng.normal(0, 1, 8), rng.normal(0.7, 1, 11)
    ours, ref = stats.independent_ttest(a, b), scipy.stats.ttest_ind(a, b)
    assert ours.t == pytest.approx(ref.statistic, rel=1e-12)
    assert ours.p == pytest.approx(ref.pvalue, rel=1e-9)


# --- Bonferroni ------------------------------------------------------------

def test_bonferroni_examples():
    assert stats.bonferroni([0.04]) == [True]
    assert stats.bonferroni([0.02] * 4) == [False] * 4
    assert stats.bonferroni([0.0124, 0.0125, 0.3, 0.0]) == [True, False, False, True]
    assert stats.bonferroni([]) == []


def test_bonferroni_rejects_invalid_p():
    with pytest.raises(RejectedInputError):
        stats.bonferroni([0.5, 1.2])


def test_p_formatting():
    assert stats.format_p(0.0004) == "p < 0.001"
    assert stats.format_p(0.04567) == "p = 0.046"


# --- confusion matrix and metrics ------------------------------------------

def test_confusion_rows_are_true_labels():
    cm = mt.confusion_matrix([0, 0, 1], [1, 1, 1], 2)
    assert cm.tolist() == [[0, 2], [0, 1]]
    with pytest.raises(RejectedInputError):
        mt.confusion_matrix([0, 6], [0, 0])
    with pytest.raises(RejectedInputError):
        mt.confusion_matrix([0, 1], [0])


def test_diagonal_matrix_is_perfect():
    m = mt.metrics(np.diag([3, 5, 2, 1, 4, 6]))
    assert m.accuracy == 1.0
    assert m.precision.tolist() == m.recall.tolist() == m.f1.tolist() == [1.0] * 6


def test_two_class_hand_computed():
    m = mt.metrics([[8, 2], [4, 6]])
    assert m.recall[0] == pytest.approx(0.8)
    assert m.precision[0] == pytest.approx(8 / 12)
    assert m.f1[0] == pytest.approx(0.727, abs=5e-4)
    assert m.accuracy == pytest.approx(0.7)


def test_zero_denominators_are_flagged():
    m = mt.metrics([[2, 0, 0], [1, 0, 0], [0, 0, 0]])
    assert m.precision[1] == 0.0 and 1 in m.undefined_precision
    assert 2 in m.undefined_recall and m.recall[2] == 0.0
    assert set(m.undefined_f1) == {1, 2}
    assert m.to_dict()["undefined"]["precision"] == [1, 2]


def test_empty_matrix_rejected():
    with pytest.raises(RejectedInputError):
        mt.metrics(np.zeros((6, 6), dtype=int))


def test_uniform_random_predictions_near_chance(rng):
    true = np.repeat(np.arange(6), 20000)
    pred = rng.integers(0, 6, true.size)
    assert mt.metrics(mt.confusion_matrix(true, pred)).accuracy == pytest.approx(1 / 6, abs=0.005)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), per_class=st.integers(1, 10))
def test_metric_invariants(seed, per_class):
    r = np.random.default_rng(seed)
    true = np.repeat(np.arange(6), per_class)
    pred = np.where(r.random(true.size) < 0.5, true, r.integers(0, 6, true.size))
    cm = mt.confusion_matrix(true, pred)
    m = mt.metrics(cm)
    assert cm.sum() == true.size
    assert ((m.recall >= 0) & (m.recall <= 1)).all()
    # balanced classes: accuracy is the plain mean of per-class recalls
    assert m.accuracy == pytest.approx(m.recall.mean(), abs=1e-12)


def test_average_confusion_is_mean_of_row_normalised():
    a = np.array([[2, 2], [0, 4]])
    b = np.array([[1, 0], [1, 1]])
    np.testing.assert_allclose(mt.average_confusion([a, b]), [[0.75, 0.25], [0.25, 0.75]])
    assert mt.row_normalize([[0, 0], [1, 3]]).tolist() == [[0, 0], [0.25, 0.75]]
    with pytest.raises(RejectedInputError):
        mt.average_confusion([])
