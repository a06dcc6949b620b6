import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rangepc.lattice import (
    BoxSpec,
    LatticeParams,
    SparseCounts,
    box_contains,
    box_contains_many,
    canonical_edge,
    decode,
    encode,
    is_neighbor,
    lattice_points,
    neighborhood_count_bruteforce,
    neighborhood_sup,
    neighborhood_sup_count,
    neighbors,
    sample_distinct_neighbors,
    unit_box_of,
    volume,
)


@pytest.mark.parametrize("d,R,V", [(2, 1, 8), (3, 1, 26), (2, 2, 24)])
def test_volume_values(d, R, V):
    assert volume(LatticeParams(d, R)) == V


@pytest.mark.parametrize("d,R", [(2, 1), (2, 3), (2, 4), (3, 1), (3, 2)])
def test_volume_matches_enumeration(d, R):
    lat = LatticeParams(d, R)
    a = (3,) * d
    cube = itertools.product(*[range(c - R - 1, c + R + 2) for c in a])
    assert sum(is_neighbor(a, b, lat) for b in cube) == lat.volume
    assert len(lat.offsets) == lat.volume
    assert len({tuple(r) for r in neighbors(a, lat)}) == lat.volume


def test_is_neighbor_examples():
    lat = LatticeParams(2, 1)
    assert not is_neighbor((0, 0), (0, 0), lat)
    assert is_neighbor((0, 0), (1, 1), lat)
    assert not is_neighbor((0, 0), (2, 0), lat)
    with pytest.raises(ValueError):
        is_neighbor((0, 0), (0, 0, 0), lat)


@given(st.lists(st.integers(-6, 6), min_size=2, max_size=2), st.lists(st.integers(-6, 6), min_size=2, max_size=2),
       st.integers(1, 4))
def test_is_neighbor_symmetric(a, b, R):
    lat = LatticeParams(2, R)
    assert is_neighbor(a, b, lat) == is_neighbor(b, a, lat)
    if is_neighbor(a, b, lat):
        assert canonical_edge(a, b, lat) == canonical_edge(b, a, lat)


@given(st.lists(st.lists(st.integers(-(2**20) + 1, 2**20 - 1), min_size=3, max_size=3), min_size=1, max_size=30))
def test_keys_roundtrip_and_order(sites):
    arr = np.array(sites, dtype=np.int64)
    keys = encode(arr, 3)
    assert np.array_equal(decode(keys, 3), arr)
    order = np.argsort(keys, kind="stable")
    lex = sorted(range(len(sites)), key=lambda i: tuple(sites[i]))
    assert [tuple(sites[i]) for i in order] == [tuple(sites[i]) for i in lex]


def test_offset_keys_are_key_increments():
    lat = LatticeParams(3, 2)
    base = np.array([[5, -7, 11]])
    moved = base + lat.offsets
    assert np.array_equal(encode(moved, 3), encode(base, 3)[0] + lat.offset_keys)


def test_sample_distinct_neighbors_edges(rng):
    lat = LatticeParams(2, 2)
    assert sample_distinct_neighbors((0, 0), 0, lat, rng).shape == (0, 2)
    full = sample_distinct_neighbors((1, 1), lat.volume, lat, rng)
    assert {tuple(r) for r in full} == {tuple(r) for r in neighbors((1, 1), lat)}
    with pytest.raises(ValueError):
        sample_distinct_neighbors((0, 0), lat.volume + 1, lat, rng)


@settings(max_examples=30)
@given(st.integers(0, 24), st.integers(0, 2**32))
def test_sample_distinct_neighbors_distinct(m, seed):
    lat = LatticeParams(2, 2)
    out = sample_distinct_neighbors((4, -1), m, lat, np.random.default_rng(seed))
    assert len({tuple(r) for r in out}) == m
    assert all(is_neighbor((4, -1), r, lat) for r in out)


def test_sample_single_neighbor_uniform():
    lat = LatticeParams(2, 1)
    rng = np.random.default_rng(7)
    n = 100_000
    draws = [tuple(sample_distinct_neighbors((0, 0), 1, lat, rng)[0]) for _ in range(n)]
    idx = {tuple(o): i for i, o in enumerate(lat.offsets)}
    freq = np.bincount([idx[x] for x in draws], minlength=8)
    sigma = np.sqrt(n * (1 / 8) * (7 / 8))
    assert np.all(np.abs(freq - n / 8) <= 4 * sigma)
    assert stats.chisquare(freq).pvalue > 1e-4


def test_box_contains_examples():
    R = 5
    lat = LatticeParams(2, R)
    box = BoxSpec((0.0, 0.0), 1.0)
    assert box_contains(box, (R, 0), lat)
    assert not box_contains(box, (R + 1, 0), lat)
    lat1 = LatticeParams(2, 1)
    assert not box_contains(BoxSpec((0.5, 0.0), 0.4), (1, 0), lat1)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 2.5), st.integers(1, 6))
def test_box_points_agree_with_predicate(cx, cy, M, R):
    lat = LatticeParams(2, R)
    box = BoxSpec((cx, cy), M)
    pts = list(lattice_points(box, lat))
    assert all(box_contains(box, p, lat) for p in pts)
    (lx, hx), (ly, hy) = box.axis_range(0, R), box.axis_range(1, R)
    ring = [(lx - 1, ly), (hx + 1, ly), (lx, ly - 1), (lx, hy + 1)]
    assert not any(box_contains(box, p, lat) for p in ring)
    if pts:
        assert box_contains_many(box, np.array(pts), lat).all()


@given(st.lists(st.integers(-40, 40), min_size=1, max_size=50), st.integers(1, 7))
def test_unit_boxes_partition(ks, R):
    k = np.array(ks, dtype=np.int64).reshape(-1, 1)
    y = unit_box_of(k, R)[:, 0]
    x = k[:, 0] / R
    # nearest integer, ties toward minus infinity
    assert np.all(np.abs(x - y) <= 0.5)
    assert np.all((x - y) > -0.5)


def test_sparse_counts_aggregate():
    sc = SparseCounts.from_sites([(1, 2), (0, 0), (1, 2)], 2)
    assert sc.to_dict() == {(0, 0): 1, (1, 2): 2}
    assert sc.mass == 3
    assert SparseCounts.from_mapping({(0, 0): 0}, 2).mass == 0


def test_sup_count_examples():
    lat = LatticeParams(2, 3)
    win = BoxSpec((0.0, 0.0), 2.0)
    assert neighborhood_sup_count(SparseCounts.empty(2), lat, win) == 0
    one = SparseCounts.from_sites([(0, 0)], 2)
    assert neighborhood_sup_count(one, lat, win) == 1


def _brute_sup(points, lat, window):
    best, arg = 0, None
    for x in lattice_points(window, lat):
        c = neighborhood_count_bruteforce(points, x, lat)
        if c > best:
            best, arg = c, x
    return best, arg


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(0, 100), st.integers(0, 2**32), st.floats(-1.5, 1.5), st.floats(0.3, 2.5))
def test_sup_count_matches_bruteforce(R, n, seed, c, M):
    lat = LatticeParams(2, R)
    r = np.random.default_rng(seed)
    sites = r.integers(-3 * R, 3 * R + 1, size=(n, 2))
    pts = SparseCounts.from_sites(sites, 2)
    win = BoxSpec((c, -c / 2), M)
    if not list(lattice_points(win, lat)):
        with pytest.raises(ValueError):
            neighborhood_sup(pts, lat, win)
        return
    best, arg = neighborhood_sup(pts, lat, win)
    assert best == _brute_sup(pts, lat, win)[0]
    if best:
        assert box_contains(win, arg, lat)
        assert neighborhood_count_bruteforce(pts, arg, lat) == best


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 2), st.integers(0, 40), st.integers(0, 2**32))
def test_sup_count_matches_bruteforce_3d(R, n, seed):
    lat = LatticeParams(3, R)
    r = np.random.default_rng(seed)
    pts = SparseCounts.from_sites(r.integers(-2 * R, 2 * R + 1, size=(n, 3)), 3)
    win = BoxSpec((0.0, 0.0, 0.0), 2.0)
    assert neighborhood_sup_count(pts, lat, win) == _brute_sup(pts, lat, win)[0]
