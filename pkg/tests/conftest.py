"""Shared brute-force oracles for the test suite."""

import itertools

import networkx as nx
import numpy as np
import pytest

from rangepc.lattice import LatticeParams, encode


def path_enumeration(n: int, lattice: LatticeParams) -> dict:
    """p_n by listing all V^n step sequences; exact rational counts / V^n."""
    V, d = lattice.volume, lattice.d
    ends = np.zeros((1, d), np.int64)
    for _ in range(n):
        ends = (ends[:, None, :] + lattice.offsets[None, :, :]).reshape(-1, d)
    sites, counts = np.unique(ends, axis=0, return_counts=True)
    return {tuple(int(c) for c in s): int(k) / V**n for s, k in zip(sites, counts)}


def bfs_ball(eta0, rho0, oracle, n: int) -> set:
    """Sites within graph distance n of eta0 in the open-edge graph off rho0."""
    lat = oracle.lattice
    d, R = lat.d, lat.R
    eta0 = [tuple(int(c) for c in s) for s in eta0]
    rho = {tuple(int(c) for c in s) for s in rho0}
    lo = np.min(eta0, axis=0) - n * R
    hi = np.max(eta0, axis=0) + n * R
    sites = [s for s in itertools.product(*[range(a, b + 1) for a, b in zip(lo, hi)]) if s not in rho]
    G = nx.Graph()
    G.add_nodes_from(sites)
    arr = np.array(sites, dtype=np.int64)
    for e in lat.offsets:
        # each undirected edge once: offsets with positive leading nonzero coordinate
        nz = e[np.nonzero(e)[0][0]]
        if nz < 0:
            continue
        nb = arr + e
        inside = np.all((nb >= lo) & (nb <= hi), axis=1)
        a, b = arr[inside], nb[inside]
        u = oracle.uniforms(encode(a, d), encode(b, d))
        for x, y in zip(a[u < oracle.p], b[u < oracle.p]):
            tx, ty = tuple(int(c) for c in x), tuple(int(c) for c in y)
            if tx not in rho and ty not in rho:
                G.add_edge(tx, ty)
    dist = nx.multi_source_dijkstra_path_length(G, [s for s in eta0 if s not in rho], cutoff=n)
    return set(dist)


def keys_to_set(keys, d: int) -> set:
    from rangepc.lattice import decode

    return {tuple(int(c) for c in s) for s in decode(np.asarray(keys, np.int64), d)}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """report(k, ok, detail) prints and records one pass/fail line."""

    def report(k: int, ok: bool, detail: str) -> bool:
        line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[k] = line
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
