import math

import mpmath as mp
import numpy as np
import pytest
import scipy.stats as ss

from fingertap import stats
from fingertap.ingest import ParticipantInfo

# six targets rated by four judges, the classic reliability worked example
JUDGES = np.array([[9, 2, 5, 8], [6, 1, 3, 2], [8, 4, 6, 8],
                   [7, 1, 2, 6], [10, 5, 6, 9], [6, 2, 4, 7]], dtype=float)

# twelve units, four observers, NaN where an observer gave no value
RELIABILITY = np.array([
    [1, 2, 3, 3, 2, 1, 4, 1, 2, np.nan, np.nan, np.nan],
    [1, 2, 3, 3, 2, 2, 4, 1, 2, 5, np.nan, 3],
    [np.nan, 3, 3, 3, 2, 3, 4, 2, 2, 5, 1, np.nan],
    [1, 2, 3, 3, 2, 4, 4, 1, 2, 5, 1, np.nan],
]).T


def test_correlations_against_scipy():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.integers(0, 5, 30).astype(float)
        y = x + rng.normal(0, 1.5, 30)
        y[:4] = np.round(y[:4])
        assert stats.pearson_r(x, y) == pytest.approx(ss.pearsonr(x, y)[0], abs=1e-12)
        assert stats.spearman_rho(x, y) == pytest.approx(ss.spearmanr(x, y)[0], abs=1e-12)
        assert stats.kendall_tau_b(x, y) == pytest.approx(ss.kendalltau(x, y)[0], abs=1e-12)
        r, p = stats.pearson_with_p(x, y)
        assert p == pytest.approx(ss.pearsonr(x, y)[1], rel=1e-8, abs=1e-14)


def test_rankdata_ties():
    assert list(stats.rankdata([3, 1, 3, 2])) == [3.5, 1, 3.5, 2]


def test_constant_input_correlation_is_nan():
    assert math.isnan(stats.pearson_r([1, 1, 1], [1, 2, 3]))


def test_mape_one_point_at_four():
    m = stats.regression_metrics([3.0], [4.0])
    assert m.mape_percent == 25.0 and m.mae == 1.0 and m.mse == 1.0


def test_regression_metrics():
    m = stats.regression_metrics([0.4, 1.5, 2.49, 4.7, 2.0], [0, 2, 2, 4, 0])
    assert m.mape_excluded == 2
    assert m.mape_percent == pytest.approx(100 * (0.25 + 0.245 + 0.175) / 3)
    # 0.4 -> 0, 1.5 -> 2, 2.49 -> 2, 4.7 -> 5 clamped to 4, 2.0 -> 2 (wrong)
    assert m.accuracy_percent == 80.0
    assert m.n == 5


@pytest.mark.parametrize("variant, want", [("ICC(1,1)", 0.17), ("ICC(2,1)", 0.29), ("ICC(3,1)", 0.71)])
def test_icc_worked_example(variant, want):
    res = stats.icc(JUDGES, variant)
    assert round(res.value, 2) == want
    assert res.ci_low < res.value < res.ci_high


def test_icc_mean_squares_by_hand():
    Y = JUDGES
    n, k = Y.shape
    g = Y.mean()
    bms = k * ((Y.mean(1) - g) ** 2).sum() / (n - 1)
    jms = n * ((Y.mean(0) - g) ** 2).sum() / (k - 1)
    ems = (((Y - Y.mean(1, keepdims=True) - Y.mean(0) + g) ** 2).sum()) / ((n - 1) * (k - 1))
    want = (bms - ems) / (bms + (k - 1) * ems + k * (jms - ems) / n)
    assert stats.icc(Y, "ICC(2,1)").value == pytest.approx(want, abs=1e-12)


def test_icc3_interval_against_f_quantiles():
    res = stats.icc(JUDGES, "ICC(3,1)")
    n, k = JUDGES.shape
    bms, _, ems, _ = stats._mean_squares(JUDGES)
    f = bms / ems
    fl = f / ss.f.ppf(0.975, n - 1, (n - 1) * (k - 1))
    fu = f * ss.f.ppf(0.975, (n - 1) * (k - 1), n - 1)
    assert res.ci_low == pytest.approx((fl - 1) / (fl + k - 1), abs=1e-8)
    assert res.ci_high == pytest.approx((fu - 1) / (fu + k - 1), abs=1e-8)


@pytest.mark.parametrize("variant", stats.ICC_VARIANTS)
def test_icc_perfect_agreement(variant):
    Y = np.repeat(np.array([[0], [1], [2], [3], [4], [2]], dtype=float), 3, axis=1)
    assert stats.icc(Y, variant).value == 1.0


def test_icc_rejects_small_or_gappy():
    with pytest.raises(ValueError):
        stats.icc(JUDGES[:4])
    bad = JUDGES.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        stats.icc(bad)


@pytest.mark.parametrize("metric, want", [("nominal", 0.743), ("ordinal", 0.815), ("interval", 0.849)])
def test_krippendorff_worked_example(metric, want):
    assert round(stats.krippendorff_alpha(RELIABILITY, metric), 3) == want


def test_krippendorff_perfect():
    R = np.array([[1, 1, 1], [2, 2, 2], [0, 0, np.nan], [4, 4, 4]], dtype=float)
    for metric in ("nominal", "ordinal", "interval"):
        assert stats.krippendorff_alpha(R, metric) == 1.0


def test_pairwise_agreement():
    rows = stats.pairwise_agreement([[1, 1], [2, 3], [0, np.nan]], ["a", "b"])
    assert rows == [{"rater_i": "a", "rater_j": "b", "n": 2, "exact_agreement_percent": 50.0, "mae": 0.5}]


def t_p_oracle(t, df, tails=2):
    with mp.workdps(40):
        t, df = mp.mpf(t), mp.mpf(df)
        tail = mp.betainc(df / 2, mp.mpf(0.5), 0, df / (df + t * t), regularized=True) / 2
        if tails == 2:
            return float(2 * tail)
        return float(tail if t > 0 else 1 - tail)


def welch_oracle(a, b):
    with mp.workdps(40):
        a = [mp.mpf(float(v)) for v in a]
        b = [mp.mpf(float(v)) for v in b]
        ma, mb = sum(a) / len(a), sum(b) / len(b)
        va = sum((v - ma) ** 2 for v in a) / (len(a) - 1) / len(a)
        vb = sum((v - mb) ** 2 for v in b) / (len(b) - 1) / len(b)
        t = (ma - mb) / mp.sqrt(va + vb)
        df = (va + vb) ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
        return float(t), float(df)


WELCH_FIXTURES = [
    ([0.3, 0.5, 0.2, 0.9, 0.4, 0.6], [0.8, 1.1, 0.7, 1.6, 0.9]),
    ([1.2, 0.4, 0.9, 0.7, 1.5, 0.3, 0.8, 1.1], [0.6, 0.5, 0.9, 0.2]),
    (list(np.random.default_rng(4).normal(0, 1, 25)), list(np.random.default_rng(5).normal(0.3, 2, 40))),
]


@pytest.mark.parametrize("a, b", WELCH_FIXTURES)
def test_welch_against_high_precision(a, b):
    t, df = welch_oracle(a, b)
    res = stats.t_test(a, b)
    assert res.statistic == pytest.approx(t, rel=1e-12) and res.df == pytest.approx(df, rel=1e-12)
    assert abs(res.p - t_p_oracle(t, df)) <= 1e-6
    one = stats.t_test(a, b, tails="one")
    assert abs(one.p - t_p_oracle(t, df, tails=1)) <= 1e-6


def test_paired_t():
    a = [5.1, 4.8, 6.0, 5.5, 5.9, 4.7]
    b = [4.9, 4.9, 5.2, 5.0, 5.1, 4.5]
    res = stats.t_test(a, b, "paired")
    ref = ss.ttest_rel(a, b)
    assert res.statistic == pytest.approx(ref.statistic, rel=1e-12)
    assert abs(res.p - t_p_oracle(res.statistic, 5)) <= 1e-6
    with pytest.raises(ValueError):
        stats.t_test([1, 2, 3], [0, 1, 2], "paired")
    assert stats.t_test([1, 2], [1, 2], "paired").p == 1.0


@pytest.mark.parametrize("table", [[[10, 20], [30, 25]], [[3, 17], [12, 8]], [[50, 5], [45, 9]]])
def test_chi_square_against_high_precision(table):
    T = np.array(table, dtype=float)
    E = np.outer(T.sum(1), T.sum(0)) / T.sum()
    x2 = float(((T - E) ** 2 / E).sum())
    res = stats.chi_square_independence(table)
    assert res.statistic == pytest.approx(x2, rel=1e-12)
    with mp.workdps(40):
        want = float(mp.erfc(mp.sqrt(mp.mpf(x2) / 2)))
    assert abs(res.p - want) <= 1e-6
    yates = stats.chi_square_independence(table, correction=True)
    ref = ss.chi2_contingency(T, correction=True)
    assert yates.statistic == pytest.approx(ref[0], rel=1e-10)


def test_chi_square_rejects_empty_margin():
    with pytest.raises(ValueError):
        stats.chi_square_independence([[0, 0], [3, 4]])


def test_subgroup_error_analysis():
    demo = {f"p{i}": ParticipantInfo(f"p{i}", 40 + 5 * i, ("male", "female")[i % 2],
                                     ("White", "Asian")[i // 4 % 2], ("pd", "control")[i % 3 == 0], "home")
            for i in range(8)}
    errors = {f"v{i}": (f"p{i}", 0.1 * i) for i in range(8)}
    rep = stats.subgroup_error_analysis(errors, demo, quality={"v0": True, "v1": True})
    sex = rep["groupings"]["sex"]
    male = [0.1 * i for i in range(0, 8, 2)]
    female = [0.1 * i for i in range(1, 8, 2)]
    assert sex["male"]["n"] == 4 and sex["test"]["p"] == pytest.approx(ss.ttest_ind(male, female, equal_var=False).pvalue, rel=1e-8)
    assert rep["groupings"]["quality"]["low"]["n"] == 2
    assert rep["groupings"]["age"]["pearson_r"] == pytest.approx(1.0)
