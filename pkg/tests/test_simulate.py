import numpy as np
import pytest

from pilot_feasibility.comparator import ThresholdTriple, go_probability
from pilot_feasibility.model import Rates, definitive_power
from pilot_feasibility.pilot import PilotDesign, pilot_power
from pilot_feasibility.simulate import (
    SimResult,
    SimSettings,
    draw_pilot,
    simulate_definitive,
    simulate_pilot,
)


def test_seeded_determinism(design):
    pd = PilotDesign(30, 2.46)
    r = Rates(0.5, 0.8, 0.7)
    a = simulate_pilot(design, pd, r, SimSettings(50_000, 3))
    b = simulate_pilot(design, pd, r, SimSettings(50_000, 3))
    c = simulate_pilot(design, pd, r, SimSettings(50_000, 4))
    assert a == b and a != c


def test_independent_of_threads(design):
    pd = PilotDesign(30, 2.0)
    r = Rates(0.6, 0.8, 0.8, sigma=1.1)
    one = simulate_pilot(design, pd, r, SimSettings(70_001, 5, threads=1), estimate_sigma=True)
    many = simulate_pilot(design, pd, r, SimSettings(70_001, 5, threads=4), estimate_sigma=True)
    assert one == many
    d1 = simulate_definitive(design, r, SimSettings(45_000, 6, threads=1))
    d3 = simulate_definitive(design, r, SimSettings(45_000, 6, threads=3))
    assert d1 == d3


def test_draw_pilot_margins():
    rng = np.random.default_rng(1)
    n_p = 20
    r = Rates(0.4, 0.7, 0.6)
    c = draw_pilot(rng, n_p, r, 200_000)
    # S ~ NB(2 n_p, phi_r): mean 2 n_p (1 - p) / p
    assert c["s"].mean() == pytest.approx(2 * n_p * 0.6 / 0.4, rel=0.01)
    assert c["f0"].mean() == pytest.approx(n_p * 0.7, rel=0.01)
    assert (c["n11"] + c["n01"]).mean() == pytest.approx(n_p * 0.7, rel=0.01)
    assert (c["n11"] + c["n10"]).mean() == pytest.approx(n_p * 0.6, rel=0.01)
    total = c["n11"] + c["n01"] + c["n00"] + c["n10"]
    assert np.all(total == n_p)


def test_sigma_hat_law():
    rng = np.random.default_rng(2)
    c = draw_pilot(rng, 10, Rates(0.5, 0.9, 0.5), 100_000, sigma=2.0)
    f = c["f0"] + c["n11"] + c["n01"]
    ok = f >= 2
    # E[sigma_hat^2] = sigma^2
    assert np.mean(c["sigma_hat"][ok] ** 2) == pytest.approx(4.0, rel=0.01)


def test_perfect_rates_always_go(design):
    res = simulate_pilot(design, PilotDesign(20, 0.5), Rates(1, 1, 1), SimSettings(10_000, 1))
    assert res.estimate == 1.0 and res.se == 0.0


@pytest.mark.parametrize("k,n_p,c,rates", [
    (0, 30, 2.46, Rates(0.5, 0.8, 0.7)),
    (1, 50, 2.6422, Rates(0.6, 0.9, 0.75)),
    (2, 10, 1.5, Rates(0.3, 0.5, 0.9)),
])
def test_pilot_power_agreement(design, k, n_p, c, rates):
    exact = pilot_power(design, PilotDesign(n_p, c), rates)
    res = simulate_pilot(design, PilotDesign(n_p, c), rates, SimSettings(100_000, 40 + k))
    assert abs(res.z_score(exact)) < 3


def test_threshold_rule_agreement(design):
    r = Rates(0.5, 0.8, 0.7)
    t = ThresholdTriple(0.5, 0.5, 0.5)
    exact = go_probability(design, 30, t, r)
    res = simulate_pilot(design, PilotDesign(30, 0.0), r, SimSettings(100_000, 9), thresholds=t)
    assert abs(res.z_score(exact)) < 3


def test_definitive_null_calibration(design):
    res = simulate_definitive(design, Rates(0.7, 0.8, 0.9), SimSettings(100_000, 10), mu=0.0)
    assert abs(res.z_score(design.alpha_one_sided)) < 3


def test_definitive_reference_power(design):
    res = simulate_definitive(design, Rates(1, 0.9, 1), SimSettings(100_000, 11))
    assert abs(res.estimate - 0.90) < 3 * res.se + 0.005
    assert abs(res.z_score(definitive_power(design, Rates(1, 0.9, 1)))) < 3


@pytest.mark.parametrize("k", range(10))
def test_definitive_power_agreement(design, k):
    rng = np.random.default_rng(200 + k)
    r = Rates(*rng.uniform(0.3, 1.0, 3))
    res = simulate_definitive(design, r, SimSettings(100_000, 300 + k))
    assert abs(res.z_score(definitive_power(design, r))) < 3


def test_z_score_uses_target_se():
    assert SimResult(0.0, 0.0, 10_000).z_score(1e-4) == pytest.approx(-1e-4 / np.sqrt(1e-4 * (1 - 1e-4) / 1e4))
    assert SimResult(0.3, 0.01, 2_100).z_score(0.25) == pytest.approx(0.05 / np.sqrt(0.25 * 0.75 / 2100))
    assert SimResult(1.0, 0.0, 100).z_score(1.0) == 0.0
    assert SimResult(0.9, 0.03, 100).z_score(1.0) == pytest.approx(-0.1 / 0.03)


@pytest.mark.parametrize("kw", [dict(replicates=0), dict(seed=-1), dict(threads=0)])
def test_settings_validation(kw):
    with pytest.raises(ValueError):
        SimSettings(**kw)


def test_zero_recruitment_rejected(design):
    with pytest.raises(ValueError):
        simulate_pilot(design, PilotDesign(5, 1.0), Rates(0.0, 0.5, 0.5), SimSettings(10, 1))
