import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rangepc import estimator as est
from rangepc.lattice import LatticeParams
from rangepc.randwalk import GridFunction, RunParams
from rangepc.sir import EdgeOracle


@settings(max_examples=50)
@given(st.integers(1, 500), st.data())
def test_wilson_matches_scipy(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = est.wilson(k, n)
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=0.95, method="wilson")
    assert lo == pytest.approx(ci.low, abs=2e-4) and hi == pytest.approx(ci.high, abs=2e-4)
    assert 0 <= lo <= k / n <= hi <= 1


def test_wilson_empty():
    assert est.wilson(0, 0) == (0.0, 1.0)


def test_survival_probe_extremes():
    for seed in range(5):
        assert not est.survival_probe(0.0, 2, 2, seed=seed)
        assert est.survival_probe(1.0, 2, 2, est.SurvivalProxy(g_max=30), seed=seed)


@pytest.mark.parametrize("seed", range(40))
def test_escape_proxy_monotone_under_coupling(seed):
    lat = LatticeParams(2, 2)
    proxy = est.SurvivalProxy("escape", radius=4.0)
    ps = np.linspace(0.02, 0.12, 6)
    res = [est.survival_probe(p, 2, 2, proxy, oracle=EdgeOracle(seed, p, lat)) for p in ps]
    # once escaped, every larger p escapes too
    assert res == sorted(res)


def test_proxy_validation():
    with pytest.raises(ValueError):
        est.SurvivalProxy("forever")
    with pytest.raises(ValueError):
        est.SurvivalProxy("escape")


def test_one_generation_frequency_closed_form():
    lat = LatticeParams(2, 1)
    proxy = est.SurvivalProxy(g_max=1)
    p = 0.05
    n, s, _, _ = est.survival_counts(p, lat, proxy, 20_000, seed=3)
    want = 1 - (1 - p) ** 8
    assert abs(s / n - want) <= 4 * math.sqrt(want * (1 - want) / n)


def test_bisection_recovers_one_generation_threshold():
    R, d = 1, 2
    V = LatticeParams(d, R).volume
    exact = 1 - 2 ** (-1 / V)
    e = est.estimate_pc(R, d, G_max=1, trials_per_level=4000, levels=10, target="frequency",
                        seed=1, early_stop=None)
    lo, hi = e.bracket
    assert hi - lo == pytest.approx(4 / V / 2**10)
    # frequency slope at the crossing is V(1-p)^(V-1); 4 sigma of binomial noise in p units
    slope = V * (1 - exact) ** (V - 1)
    tol = 4 * math.sqrt(0.25 / 4000) / slope + (hi - lo)
    assert abs(e.p_hat - exact) <= tol


def test_estimate_pc_validation():
    with pytest.raises(ValueError):
        est.estimate_pc(2, 2, trials_per_level=50)
    with pytest.raises(ValueError):
        est.estimate_pc(2, 2, target="median")
    with pytest.raises(ValueError):
        est.estimate_pc(2, 2, bracket=(0.3, 0.1))


def test_counts_do_not_depend_on_threads():
    lat = LatticeParams(2, 2)
    proxy = est.SurvivalProxy(g_max=40)
    a = est.survival_counts(0.05, lat, proxy, 1000, seed=9, threads=1)
    b = est.survival_counts(0.05, lat, proxy, 1000, seed=9, threads=3)
    assert a == b


def test_estimate_pc_deterministic_and_above_mean_field():
    a = est.estimate_pc(2, 2, G_max=60, trials_per_level=400, levels=6, seed=4)
    b = est.estimate_pc(2, 2, G_max=60, trials_per_level=400, levels=6, seed=4, threads=2)
    assert a.p_hat == b.p_hat and [c.survivals for c in a.curve] == [c.survivals for c in b.curve]
    assert a.p_hat * a.V > 1
    assert a.theta_hat == pytest.approx((a.p_hat * a.V - 1) * 2)


@pytest.mark.parametrize("gamma,theta", [(1.0, 2.0), (2.0, 3.0), (0.5, 0.7)])
def test_scaling_fit_exact_power_law(gamma, theta):
    pts = []
    for R in (2, 4, 8, 16):
        V = LatticeParams(2, R).volume
        pts.append((R, (1 + theta * R**-gamma) / V))
    fit = est.scaling_fit(pts)
    assert fit.gamma == pytest.approx(gamma, abs=1e-12)
    assert fit.theta == pytest.approx(theta, rel=1e-12)


def test_scaling_fit_errors():
    with pytest.raises(ValueError):
        est.scaling_fit([(2, 1 / 24), (4, 2 / 80), (8, 2 / 288)])
    with pytest.raises(ValueError):
        est.scaling_fit([(2, 2 / 24), (4, 2 / 80)])


def test_dump_estimates_csv(tmp_path):
    e = est.estimate_pc(1, 2, G_max=5, trials_per_level=100, levels=3, seed=0)
    path, cpath = tmp_path / "pc.csv", tmp_path / "curve.csv"
    est.dump_estimates_csv([e], path, cpath)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["R", "d", "G_max", "p_hat", "lo", "hi", "theta_hat"]
    assert float(rows[1][3]) == e.p_hat
    assert len(list(csv.reader(open(cpath)))) == 1 + len(e.curve)


def _indicator(R, radius=1):
    W = R * radius
    return GridFunction(np.ones((2 * W + 1, 2 * W + 1)), (-W, -W))


def test_expected_mass_from_origin():
    prm = RunParams(LatticeParams(2, 2), 1.0)
    phi = _indicator(2, 50)
    # phi covers the whole reach after n steps, so only growth remains
    assert est.expected_mass(prm, [(0, 0)], 3, phi) == pytest.approx((1 + prm.drift) ** 3)


def test_moment_battery_passes_small():
    prm = RunParams(LatticeParams(2, 2), 1.0)
    phi = _indicator(2)
    G = est.g_weight(phi, 4, prm)
    growth = math.exp(4 * prm.drift)
    sc = est.MomentScenario([(0, 0)], 4, 2000, phi, lam=0.5 / (growth * G),
                            lam_occupation=0.5 / (8 * growth * G), seed=2)
    recs = est.moment_battery(prm, sc)
    assert [r.name for r in recs] == ["first", "second", "exponential", "occupation"]
    assert all(r.passed for r in recs), [r.to_dict() for r in recs]


def test_moment_battery_regime_errors():
    prm = RunParams(LatticeParams(2, 2), 1.0)
    phi = _indicator(2)
    with pytest.raises(ValueError):
        est.moment_battery(prm, est.MomentScenario([(0, 0)], 4, 10, phi, lam=10.0))
    with pytest.raises(ValueError):
        est.moment_battery(prm, est.MomentScenario([(0, 0)], 4, 10, phi, lam=1e-6, checks=("freedman",)))
    with pytest.raises(ValueError):
        est.moment_battery(prm, est.MomentScenario([(0, 0), (1, 1)], 4, 10, phi, lam=1e-6, checks=("second",)))
    neg = GridFunction(-np.ones((3, 3)), (-1, -1))
    with pytest.raises(ValueError):
        est.moment_battery(prm, est.MomentScenario([(0, 0)], 2, 10, neg))
