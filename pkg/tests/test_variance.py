import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize
from scipy import stats as sps

from pilot_feasibility.model import DefinitiveDesign, Rates, expected_recruited, x_from_parts
from pilot_feasibility.pilot import PilotDesign, PilotEstimates, statistic_from_estimates
from pilot_feasibility.simulate import SimSettings, simulate_pilot
from pilot_feasibility.variance import (
    VarianceConfig,
    pilot_power_unknown_sigma,
    variance_cutoff,
)

FULL = VarianceConfig(0.5, 1.0 - 1e-12)


def oracle_unknown_sigma(design, n_p, c, rates):
    """Root-find the critical SD per outcome, then integrate the chi-squared law."""
    sigma = rates.sigma
    s_max = int(sps.nbinom.ppf(1 - 1e-13, 2 * n_p, rates.phi_r)) + 5
    s = np.arange(s_max + 1)
    ps = sps.nbinom.pmf(s, 2 * n_p, rates.phi_r)
    e_n = expected_recruited(design, 2 * n_p / (2 * n_p + s))
    total = 0.0
    for a in range(1, n_p + 1):
        pa = sps.binom.pmf(a, n_p, rates.phi_a)
        for f in range(2, 2 * n_p + 1):
            pf = sps.binom.pmf(f, 2 * n_p, rates.phi_f)
            for k in range(s_max + 1):
                g = lambda sd: float(x_from_parts(design.mu, sd, e_n[k], f / (2 * n_p), a / n_p)) - c  # noqa: E731
                if g(1e-9) <= 0:
                    continue
                crit = optimize.brentq(g, 1e-9, 1e3, xtol=1e-14, rtol=1e-14)
                total += pa * pf * ps[k] * sps.chi2.cdf(crit ** 2 * (f - 1) / sigma ** 2, f - 1)
    return total


@pytest.mark.parametrize("n_p,c,rates", [
    (4, 1.2, Rates(0.6, 0.8, 0.7, sigma=1.0)),
    (5, 2.0, Rates(0.9, 0.9, 0.9, sigma=0.7)),
])
def test_matches_root_finding_oracle(small_design, n_p, c, rates):
    h = pilot_power_unknown_sigma(small_design, PilotDesign(n_p, c), rates, FULL)
    assert h == pytest.approx(oracle_unknown_sigma(small_design, n_p, c, rates), abs=1e-9)


def test_cutoff_perfect_estimates(design):
    y = variance_cutoff(design, PilotEstimates(1.0, 1.0, 1.0), 2.6422)
    assert y == pytest.approx(0.09 * 514 / (4 * 2.6422 ** 2), rel=1e-12)
    assert y == pytest.approx(1.6567, abs=2e-4)


@given(r=st.floats(0.05, 1.0), f=st.floats(0.05, 1.0), a=st.floats(0.05, 1.0),
       c=st.floats(0.2, 4.0), sd=st.floats(0.05, 3.0))
@settings(max_examples=150, deadline=None)
def test_cutoff_equivalence(r, f, a, c, sd):
    d = DefinitiveDesign(514, 1000, 0.3)
    est = PilotEstimates(r, f, a)
    y = variance_cutoff(d, est, c)
    x = statistic_from_estimates(d, est, sd)
    if abs(sd * sd - y) > 1e-9 * max(1.0, abs(y)):
        assert (sd * sd < y) == (x > c)


def test_cutoff_nonpositive_for_small_estimates(design):
    assert variance_cutoff(design, PilotEstimates(0.05, 0.05, 0.1), 2.0) <= 0


def test_large_sigma_gives_zero(design):
    h = pilot_power_unknown_sigma(design, PilotDesign(30, 2.0), Rates(0.8, 0.9, 0.9, sigma=50.0),
                                  VarianceConfig(0.5))
    assert h < 1e-12


def test_no_follow_up_gives_zero(design):
    h = pilot_power_unknown_sigma(design, PilotDesign(30, 1.0), Rates(0.8, 0.0, 0.9, sigma=1.0),
                                  VarianceConfig(0.5))
    assert h == 0.0


def test_nonincreasing_in_sigma(design):
    pd = PilotDesign(50, 2.6)
    r = Rates(0.8, 0.95, 0.75)
    grid = np.linspace(0.5, 2.0, 16)
    h = [pilot_power_unknown_sigma(design, pd, r.with_sigma(s), VarianceConfig(0.5)) for s in grid]
    assert all(b <= a + 1e-12 for a, b in zip(h, h[1:]))


@pytest.mark.parametrize("rates", [
    # worst cases for the null and the alternative near c = 2.84, n_p = 50
    Rates(1.0, 0.3044, 1.0, sigma=0.8),
    Rates(0.515, 0.9428, 1.0, sigma=1.172),
])
def test_truncation_sensitivity(design, rates):
    pd = PilotDesign(50, 2.84)
    lo = pilot_power_unknown_sigma(design, pd, rates, VarianceConfig(0.8, 0.999))
    hi = pilot_power_unknown_sigma(design, pd, rates, VarianceConfig(0.8, 0.99999))
    assert abs(hi - lo) < 1e-4


def test_truncation_only_removes_mass(design):
    pd = PilotDesign(30, 1.2)
    r = Rates(0.5, 0.8, 0.7, sigma=0.9)
    lo = pilot_power_unknown_sigma(design, pd, r, VarianceConfig(0.8, 0.999))
    hi = pilot_power_unknown_sigma(design, pd, r, VarianceConfig(0.8, 1 - 1e-10))
    assert lo <= hi <= lo + 1e-3


def test_mode_restriction(design):
    with pytest.raises(ValueError):
        pilot_power_unknown_sigma(design, PilotDesign(10, 1.0, "correlated"),
                                  Rates(0.5, 0.5, 0.5, sigma=1.0), VarianceConfig(0.5))


def test_config_validation():
    with pytest.raises(ValueError):
        VarianceConfig(0.0)
    with pytest.raises(ValueError):
        VarianceConfig(1.0, 0.5)


@pytest.mark.parametrize("k,n_p,c,rates", [
    (0, 30, 2.46, Rates(0.5, 0.8, 0.7, sigma=1.0)),
    (1, 30, 1.2, Rates(0.5, 0.8, 0.7, sigma=0.9)),
    (2, 50, 2.8, Rates(1.0, 0.3044, 1.0, sigma=0.8)),
    (3, 20, 1.8, Rates(0.7, 0.6, 0.9, sigma=1.3)),
])
def test_mc_agreement(design, k, n_p, c, rates):
    pd = PilotDesign(n_p, c)
    exact = pilot_power_unknown_sigma(design, pd, rates, VarianceConfig(0.5, 1 - 1e-10))
    res = simulate_pilot(design, pd, rates, SimSettings(100_000, 500 + k), estimate_sigma=True)
    assert abs(res.z_score(exact)) < 3
