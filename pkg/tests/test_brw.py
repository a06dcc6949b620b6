import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rangepc import _kernels
from rangepc import brw
from rangepc.lattice import LatticeParams, SparseCounts, unit_box_of
from rangepc.randwalk import ConstantFunction, GridFunction, RunParams, box_indicator


def _prm(d=2, R=2, theta=0.5):
    return RunParams(LatticeParams(d, R), theta)


def test_empty_population_is_absorbing(rng):
    prm = _prm()
    z = brw.Population(SparseCounts.empty(2))
    assert brw.brw_step(z, prm, rng).mass == 0


def test_children_sit_on_distinct_neighbours(rng):
    prm = _prm(R=3, theta=30.0)
    z = brw.Population.from_sites([(0, 0)], 2)
    nxt, log = brw._step_with_log(z, prm, rng)
    assert nxt.mass == log.parent.size
    assert len(set(log.direction.tolist())) == log.direction.size
    assert np.all(np.abs(nxt.sites).max(axis=1) <= 3) and not np.any(np.all(nxt.sites == 0, axis=1))


@pytest.mark.parametrize("theta", [0.0, 1.0])
def test_one_step_mean_mass(theta):
    prm = _prm(R=3, theta=theta)
    z = brw.Population.from_sites([(0, 0), (0, 0), (5, 1)], 2)
    rng = np.random.default_rng(11)
    masses = np.array([brw.brw_step(z, prm, rng).mass for _ in range(10_000)])
    se = masses.std(ddof=1) / math.sqrt(len(masses))
    assert abs(masses.mean() - 3 * (1 + prm.drift)) <= 4 * se


def test_offspring_law_is_binomial():
    V, p = 24, 1.3 / 24
    counts, _ = _kernels.draw_births(100_000, V, p, np.random.default_rng(2))
    exp = stats.binom.pmf(np.arange(5), V, p) * len(counts)
    obs = np.append(np.bincount(counts, minlength=5)[:5], (counts >= 5).sum()).astype(float)
    exp = np.append(exp, len(counts) - exp.sum())
    assert stats.chisquare(obs, exp).pvalue > 1e-4


def test_measure_apply_examples():
    lat = LatticeParams(2, 2)
    z = brw.Population.from_mapping({(0, 0): 3, (4, 1): 1}, 2)
    assert brw.measure_apply(z, ConstantFunction(1.0)) == 4
    assert brw.measure_apply(z, box_indicator((0, 0), 1.0, lat)) == 3
    single = brw.Population.from_sites([(0, 0)], 2)
    nbhd = lambda s: ((np.abs(s).max(axis=1) > 0) & (np.abs(s).max(axis=1) <= 2)).astype(float)
    assert brw.measure_apply(single, nbhd) == 0


@given(st.integers(0, 2**32))
@settings(max_examples=20)
def test_measure_apply_linear_and_additive(seed):
    r = np.random.default_rng(seed)
    a = brw.Population.from_sites(r.integers(-3, 4, size=(6, 2)), 2)
    b = brw.Population.from_sites(r.integers(-3, 4, size=(4, 2)), 2)
    f = GridFunction(r.random((7, 7)), (-3, -3))
    g = GridFunction(r.random((7, 7)), (-3, -3))
    fg = GridFunction(2 * f.values - 3 * g.values, (-3, -3))
    assert brw.measure_apply(a, fg) == pytest.approx(2 * brw.measure_apply(a, f) - 3 * brw.measure_apply(a, g))
    ab = brw.Population(SparseCounts.from_sites(np.vstack([a.particles(), b.particles()]), 2))
    assert brw.measure_apply(ab, f) == pytest.approx(brw.measure_apply(a, f) + brw.measure_apply(b, f))


def test_measure_apply_undefined_site_raises():
    f = GridFunction(np.ones((2, 2)), (0, 0), outside="error")
    with pytest.raises(KeyError):
        brw.measure_apply(brw.Population.from_sites([(5, 5)], 2), f)


def _replay_increments(traj, phi):
    """Per-direction sum (B - p) phi(Y + e) from the birth log."""
    prm = traj.params
    out = []
    for log in traj.births:
        n = log.particles.shape[0]
        B = np.zeros((n, prm.V))
        B[log.parent, log.direction] = 1.0
        pos = log.particles[:, None, :] + prm.lattice.offsets[None, :, :]
        vals = np.asarray(phi(pos.reshape(-1, prm.d))).reshape(n, prm.V)
        out.append(math.fsum(((B - prm.p) * vals).ravel()))
    return out


@pytest.mark.parametrize("seed", range(8))
def test_martingale_increments_match_birth_replay(seed):
    prm = _prm(R=1, theta=2.0)
    rng = np.random.default_rng(seed)
    z0 = brw.Population.from_sites([(0, 0), (1, 0)], 2)
    tr = brw.simulate(z0, prm, 3, rng, log_births=True)
    phi = GridFunction(np.random.default_rng(100 + seed).random((7, 7)), (-3, -3))
    got = brw.martingale_increments(tr, phi)
    want = _replay_increments(tr, phi)
    assert np.allclose(got, want, atol=1e-12)


def test_martingale_and_qv_trivial_cases(rng):
    prm = _prm()
    tr = brw.simulate(brw.Population.from_sites([(0, 0)], 2), prm, 6, rng)
    assert brw.martingale_term(tr, ConstantFunction(0.0)) == 0
    assert brw.quadratic_variation(tr, ConstantFunction(0.0)) == 0
    c = 1.7
    masses = [z.mass for z in tr.populations[:6]]
    want = prm.p * (1 - prm.p) * prm.V * c * c * sum(masses)
    assert brw.quadratic_variation(tr, ConstantFunction(c)) == pytest.approx(want)
    with pytest.raises(ValueError):
        brw.martingale_term(tr, ConstantFunction(1.0), 7)


def test_martingale_mean_zero_and_isometry():
    prm = _prm(R=4, theta=1.0)
    phi = GridFunction(np.ones((17, 17)), (-8, -8))
    z0 = brw.Population.from_sites([(0, 0)], 2)
    rng = np.random.default_rng(21)
    M, Q = [], []
    for _ in range(10_000):
        tr = brw.simulate(z0, prm, 10, rng)
        M.append(brw.martingale_term(tr, phi))
        Q.append(brw.quadratic_variation(tr, phi))
    M, Q = np.array(M), np.array(Q)
    n = len(M)
    assert abs(M.mean()) <= 4 * M.std(ddof=1) / math.sqrt(n)
    diff = M**2 - Q
    assert abs(diff.mean()) <= 4 * diff.std(ddof=1) / math.sqrt(n)


def test_gw_mean_curve():
    prm = RunParams(LatticeParams(2, 4), 1.0)  # drift 0.25
    tr = brw.Trajectory([brw.Population.from_sites([(0, 0)], 2)] * 3, prm)
    mass, mean = brw.gw_stats(tr)
    assert mean[0] == 1 and mean[2] == pytest.approx(1.5625)


def test_gw_variance_matches_simulation():
    prm = RunParams(LatticeParams(2, 2), 1.0)
    z0 = brw.Population.from_sites([(0, 0)], 2)
    rng = np.random.default_rng(8)
    n = 4
    masses = np.array([brw.simulate(z0, prm, n, rng).populations[-1].mass for _ in range(100_000)])
    want = brw.gw_variance(prm, n)
    assert masses.var(ddof=1) == pytest.approx(want, rel=0.1)
    assert brw.gw_variance(RunParams(LatticeParams(2, 2), 0.0), 3) == pytest.approx(3 * (1 - 1 / 24))


def test_rescaled_measure():
    prm = RunParams(LatticeParams(2, 5), 1.0)
    z = brw.Population.from_mapping({(0, 0): 3}, 2)
    atoms = brw.rescaled_measure(z, prm, 0.0)
    assert len(atoms) == 1 and atoms[0][1] == pytest.approx(3 / 5) and not atoms[0][0].any()
    z2 = brw.Population.from_mapping({(0, 0): 3, (7, -2): 2}, 2)
    assert sum(w for _, w in brw.rescaled_measure(z2, prm)) == pytest.approx(1.0)
    assert brw.rescaled_measure(brw.Population(SparseCounts.empty(2)), prm) == []


def test_thin_examples():
    prm = RunParams(LatticeParams(2, 3), 1.0)
    K = 4 / prm.beta_d  # threshold 4
    heavy = {(0, 0): 5, (9, 0): 2}
    out = brw.thin(brw.Population.from_mapping(heavy, 2), K, prm)
    assert out.to_dict() == {(9, 0): 2}
    light = brw.Population.from_mapping({(0, 0): 4, (1, 1): 0, (9, 0): 2}, 2)
    assert brw.thin(light, K, prm).to_dict() == light.to_dict()
    with pytest.raises(ValueError):
        brw.thin(light, 0, prm)


def _box_counts(pop, R):
    out = {}
    for s, c in zip(unit_box_of(pop.sites, R), pop.counts.counts):
        out[tuple(s)] = out.get(tuple(s), 0) + int(c)
    return out


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(0, 60), st.integers(0, 2**32), st.floats(0.2, 4.0))
def test_thin_matches_bruteforce(R, n, seed, K):
    prm = RunParams(LatticeParams(2, R), 1.0)
    r = np.random.default_rng(seed)
    pop = brw.Population.from_sites(r.integers(-2 * R, 2 * R + 1, size=(n, 2)), 2)
    thr = K * prm.beta_d
    before = _box_counts(pop, R)
    want = {}
    for s, c in pop.to_dict().items():
        y = tuple(math.ceil(Fraction(2 * k - R, 2 * R)) for k in s)
        if before[y] <= thr:
            want[s] = c
    out = brw.thin(pop, K, prm)
    assert out.to_dict() == want
    after = _box_counts(out, R)
    assert all(after[y] <= before[y] for y in after)
    assert all(c <= thr for c in after.values())
    assert brw.thin(out, K, prm).to_dict() == out.to_dict()


def test_simulation_reproducible():
    prm = _prm(R=3, theta=2.0)
    z0 = brw.Population.from_sites([(0, 0)], 2)
    a = brw.simulate(z0, prm, 8, np.random.default_rng(5))
    b = brw.simulate(z0, prm, 8, np.random.default_rng(5))
    assert [z.to_dict() for z in a.populations] == [z.to_dict() for z in b.populations]


def test_dump_trajectory_csv(tmp_path, rng):
    prm = _prm()
    tr = brw.simulate(brw.Population.from_sites([(0, 0)], 2), prm, 3, rng)
    path = tmp_path / "traj.csv"
    brw.dump_trajectory_csv(tr, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "generation,k_1,k_2,count"
    assert len(lines) - 1 == sum(len(z.counts) for z in tr.populations)
