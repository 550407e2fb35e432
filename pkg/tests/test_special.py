"""Special functions against arbitrary-precision references."""

import math

import mpmath
import pytest

from fingertap import special

mpmath.mp.dps = 40


def ref_betainc(a, b, x):
    return float(mpmath.betainc(a, b, 0, x, regularized=True))


@pytest.mark.parametrize("a,b,x", [
    (0.5, 0.5, 0.3), (2.0, 3.0, 0.4), (10.0, 0.5, 0.97), (0.5, 40.0, 0.01),
    (150.0, 0.5, 0.999), (3.5, 3.5, 0.5), (1.0, 1.0, 0.25), (60.0, 60.0, 0.45),
])
def test_betainc_matches_mpmath(a, b, x):
    assert special.betainc(a, b, x) == pytest.approx(ref_betainc(a, b, x), rel=1e-12, abs=1e-15)


def test_betainc_edges():
    assert special.betainc(2.0, 3.0, 0.0) == 0.0
    assert special.betainc(2.0, 3.0, 1.0) == 1.0


@pytest.mark.parametrize("a,x", [(0.5, 0.1), (0.5, 3.0), (1.0, 1.0), (5.0, 2.0), (5.0, 12.0), (30.0, 25.0)])
def test_gamma_regularized(a, x):
    lower = float(mpmath.gammainc(a, 0, x, regularized=True))
    assert special.gammainc(a, x) == pytest.approx(lower, rel=1e-12)
    assert special.gammaincc(a, x) == pytest.approx(1 - lower, rel=1e-10, abs=1e-300)


@pytest.mark.parametrize("t,df", [(0.0, 5), (1.3, 4), (-2.7, 11.5), (4.0, 198), (12.0, 3)])
def test_student_t(t, df):
    # two-sided p = I_{df/(df+t^2)}(df/2, 1/2)
    ref = ref_betainc(df / 2, 0.5, df / (df + t * t))
    assert special.t_two_sided(t, df) == pytest.approx(ref, rel=1e-10)
    assert special.t_cdf(t, df) + special.t_sf(t, df) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("x,df", [(0.5, 1), (3.841458820694124, 1), (10.0, 1), (7.0, 4)])
def test_chi2_sf(x, df):
    ref = float(mpmath.gammainc(df / 2, x / 2, mpmath.inf, regularized=True))
    assert special.chi2_sf(x, df) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("q,d1,d2", [(0.975, 4, 20), (0.5, 1, 1), (0.95, 199, 398), (0.99, 7.3, 12.1)])
def test_f_ppf_inverts_cdf(q, d1, d2):
    x = special.f_ppf(q, d1, d2)
    assert special.f_cdf(x, d1, d2) == pytest.approx(q, abs=1e-10)


def test_chi2_critical_value():
    assert special.chi2_sf(3.841458820694124, 1) == pytest.approx(0.05, abs=1e-12)
    assert math.isclose(special.chi2_sf(0.0, 1), 1.0)
