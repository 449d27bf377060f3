import math
from fractions import Fraction
from math import comb

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pilot_feasibility import stats
from pilot_feasibility.errors import DomainError, NumericGuardError


def exact_binom_pmf(k, n, p):
    p = Fraction(p)
    return comb(n, k) * p ** k * (1 - p) ** (n - k)


def exact_nb_pmf(s, r, p):
    p = Fraction(p)
    return comb(r + s - 1, s) * p ** r * (1 - p) ** s


# normal ----------------------------------------------------------------

@pytest.mark.parametrize("z", [-8.0, -3.1, -1.0, 0.0, 0.5, 1.96, 4.2])
def test_normal_cdf_matches_mpmath(z):
    assert stats.std_normal_cdf(z) == pytest.approx(float(mpmath.ncdf(z)), rel=1e-14, abs=1e-300)


@pytest.mark.parametrize("p", [1e-10, 0.001, 0.025, 0.3, 0.5, 0.8, 0.975, 1 - 1e-9])
def test_normal_quantile_roundtrip(p):
    z = stats.std_normal_quantile(p)
    assert float(mpmath.ncdf(z)) == pytest.approx(p, rel=1e-12)


def test_normal_quantile_known():
    assert stats.std_normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-14)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_normal_quantile_domain(p):
    with pytest.raises(DomainError):
        stats.std_normal_quantile(p)


def test_normal_cdf_array_matches_scalar():
    z = np.linspace(-6, 6, 41)
    np.testing.assert_allclose(stats.std_normal_cdf_array(z),
                               [stats.std_normal_cdf(v) for v in z], rtol=1e-15)


# binomial --------------------------------------------------------------

@given(n=st.integers(0, 40), p=st.sampled_from([0.0, 0.05, 0.3, 0.5, 0.77, 0.999, 1.0]))
@settings(max_examples=60, deadline=None)
def test_binomial_pmf_exact(n, p):
    arr = stats.binomial_pmf_array(n, p)
    for k in range(n + 1):
        assert arr[k] == pytest.approx(float(exact_binom_pmf(k, n, p)), rel=1e-11, abs=1e-300)
        assert stats.binomial_pmf(k, n, p) == pytest.approx(arr[k], rel=1e-12, abs=1e-300)


@given(n=st.integers(1, 60), p=st.floats(0.01, 0.99))
@settings(max_examples=60, deadline=None)
def test_binomial_cdf_and_sf(n, p):
    pmf = stats.binomial_pmf_array(n, p)
    sf = stats.binomial_sf_array(n, p)
    for k in range(n + 1):
        cdf = stats.binomial_cdf(k, n, p)
        assert cdf == pytest.approx(pmf[: k + 1].sum(), abs=1e-13)
        assert sf[k] == pytest.approx(pmf[k + 1:].sum(), abs=1e-13)
    assert sf[-1] == 0.0


def test_binomial_array_broadcast():
    p = np.array([[0.1, 0.5], [0.9, 1.0]])
    arr = stats.binomial_pmf_array(7, p)
    assert arr.shape == (2, 2, 8)
    np.testing.assert_allclose(arr.sum(axis=-1), 1.0, rtol=1e-13)


def test_binomial_domain():
    with pytest.raises(DomainError):
        stats.binomial_pmf(1, 3, 1.2)


# negative binomial -----------------------------------------------------

@given(r=st.integers(1, 12), p=st.sampled_from([0.1, 0.35, 0.5, 0.8, 1.0]))
@settings(max_examples=40, deadline=None)
def test_neg_binomial_pmf_exact(r, p):
    arr = stats.neg_binomial_pmf_array(r, p, 40)
    for s in range(41):
        assert arr[s] == pytest.approx(float(exact_nb_pmf(s, r, p)), rel=1e-11, abs=1e-300)


@given(r=st.integers(1, 60), p=st.floats(0.05, 0.99), s=st.integers(0, 300))
@settings(max_examples=100, deadline=None)
def test_neg_binomial_binomial_tail_identity(r, p, s):
    # at most s failures before the r-th success <=> at least r successes in r + s trials
    lhs = stats.neg_binomial_cdf(s, r, p)
    rhs = stats.binomial_sf_array(r + s, p)[r - 1]
    assert lhs == pytest.approx(rhs, abs=1e-12)
    arr = stats.neg_binomial_cdf_array(r, p, s)
    assert arr[s] == pytest.approx(lhs, abs=1e-12)


def test_neg_binomial_brute_force_screening():
    # enumerate screening sequences: 3 consents needed, p = 2/5, exact
    r, p = 3, Fraction(2, 5)
    for s in range(6):
        # sequences with s refusals and r consents ending in a consent
        total = comb(r - 1 + s, s) * p ** r * (1 - p) ** s
        assert stats.neg_binomial_pmf(s, r, 0.4) == pytest.approx(float(total), rel=1e-13)


@pytest.mark.parametrize("q,r,p", [(0.5, 10, 0.3), (0.999, 100, 0.35), (1 - 1e-12, 60, 0.9),
                                   (0.999, 1, 0.01)])
def test_neg_binomial_quantile(q, r, p):
    s = stats.neg_binomial_quantile(q, r, p)
    assert stats.neg_binomial_cdf(s, r, p) >= q - 1e-12
    if s > 0:
        assert stats.neg_binomial_cdf(s - 1, r, p) < q


def test_neg_binomial_quantile_degenerate_and_guard():
    assert stats.neg_binomial_quantile(0.9, 5, 1.0) == 0
    with pytest.raises(DomainError):
        stats.neg_binomial_quantile(0.9, 5, 0.0)
    with pytest.raises(NumericGuardError):
        stats.neg_binomial_quantile(0.999, 100, 1e-6)


# incomplete gamma / chi-squared ----------------------------------------

@pytest.mark.parametrize("a", [0.5, 1.0, 2.5, 10.0, 49.5, 150.0])
@pytest.mark.parametrize("ratio", [0.01, 0.3, 0.9, 1.0, 1.1, 2.0, 5.0])
def test_reg_lower_gamma_matches_mpmath(a, ratio):
    x = a * ratio
    ref = float(mpmath.gammainc(a, 0, x, regularized=True))
    assert stats.reg_lower_gamma(a, x) == pytest.approx(ref, rel=1e-11, abs=1e-15)


def test_reg_lower_gamma_array_matches_scalar():
    rng = np.random.default_rng(3)
    a = rng.integers(1, 120, 400) / 2.0
    x = rng.random(400) * 120
    arr = stats.reg_lower_gamma_array(a, x)
    ref = np.array([float(mpmath.gammainc(ai, 0, xi, regularized=True)) for ai, xi in zip(a, x)])
    np.testing.assert_allclose(arr, ref, rtol=1e-10, atol=1e-15)


def test_chisq_closed_forms():
    # df = 2: 1 - exp(-x/2); df = 1: erf(sqrt(x/2))
    for x in (0.1, 1.0, 3.7, 20.0):
        assert stats.chisq_cdf(x, 2) == pytest.approx(1 - math.exp(-x / 2), rel=1e-13)
        assert stats.chisq_cdf(x, 1) == pytest.approx(math.erf(math.sqrt(x / 2)), rel=1e-12)
    assert stats.chisq_cdf(0.0, 5) == 0.0
    assert stats.chisq_cdf(-1.0, 5) == 0.0
    with pytest.raises(DomainError):
        stats.chisq_cdf(1.0, 0)


# multinomial -----------------------------------------------------------

def test_multinomial_exact():
    probs = [Fraction(1, 10), Fraction(2, 10), Fraction(3, 10), Fraction(4, 10)]
    counts = (2, 0, 3, 1)
    n = sum(counts)
    exact = Fraction(math.factorial(n))
    for c, p in zip(counts, probs):
        exact = exact / math.factorial(c) * p ** c
    assert stats.multinomial_pmf(counts, [float(p) for p in probs]) == pytest.approx(
        float(exact), rel=1e-13)


def test_multinomial_rejects_bad_probs():
    with pytest.raises(DomainError):
        stats.multinomial_pmf((1, 1), (0.5, 0.6))


@pytest.mark.parametrize("n,parts", [(0, 4), (1, 4), (5, 4), (12, 3), (7, 1)])
def test_compositions_enumeration(n, parts):
    comps = stats.compositions(n, parts)
    assert len(comps) == comb(n + parts - 1, parts - 1)
    assert np.all(comps.sum(axis=1) == n)
    assert len({tuple(r) for r in comps}) == len(comps)


def test_multinomial_sums_to_one_over_compositions():
    probs = [0.1, 0.25, 0.4, 0.25]
    total = sum(stats.multinomial_pmf(c, probs) for c in stats.compositions(9, 4))
    assert total == pytest.approx(1.0, abs=1e-13)
