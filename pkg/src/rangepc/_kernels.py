"""numba hot loops: edge hash, offspring placement, epidemic survival runs."""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0

KEY_BITS = 21
KEY_BIAS = 1 << 20
KEY_MASK = (1 << 21) - 1

# survival run outcomes
EXTINCT = 0
HORIZON = 1
CAPPED = 2
ESCAPED = 3


@njit(inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(inline="always")
def edge_u(seed, a, b):
    """Uniform [0,1) value of the edge {a, b}; a, b are site keys."""
    if a > b:
        a, b = b, a
    h = _mix(np.uint64(seed) ^ _mix(np.uint64(a) + _GOLDEN))
    h = _mix(h ^ (np.uint64(b) * _GOLDEN + np.uint64(1)))
    return np.float64(h >> np.uint64(11)) * _INV53


@njit(nogil=True, cache=True)
def edge_uniforms(seed, a, b):
    out = np.empty(a.shape[0], dtype=np.float64)
    for i in range(a.shape[0]):
        out[i] = edge_u(seed, a[i], b[i])
    return out


@njit(nogil=True, cache=True)
def draw_births(n_particles, V, p, rng):
    """Offspring of n particles: Binomial(V, p) many, on distinct directions.

    Returns per-particle counts and the concatenated direction indices.
    Each subset is uniform among subsets of its size (Floyd's algorithm).
    """
    counts = np.empty(n_particles, dtype=np.int64)
    total = 0
    for i in range(n_particles):
        c = rng.binomial(V, p)
        counts[i] = c
        total += c
    idx = np.empty(total, dtype=np.int64)
    mark = np.zeros(V, dtype=np.bool_)
    pos = 0
    for i in range(n_particles):
        c = counts[i]
        start = pos
        for j in range(V - c, V):
            t = rng.integers(0, j + 1)
            if mark[t]:
                t = j
            mark[t] = True
            idx[pos] = t
            pos += 1
        for q in range(start, pos):
            mark[idx[q]] = False
    return counts, idx


@njit(inline="always")
def _slot(key, mask):
    return np.int64(_mix(np.uint64(key)) & np.uint64(mask))


@njit(cache=True)
def _table_insert(keys, vals, key, val):
    mask = keys.shape[0] - 1
    s = _slot(key, mask)
    while keys[s] != -1:
        if keys[s] == key:
            return False
        s = (s + 1) & mask
    keys[s] = key
    vals[s] = val
    return True


@njit(cache=True)
def _table_has(keys, key):
    mask = keys.shape[0] - 1
    s = _slot(key, mask)
    while keys[s] != -1:
        if keys[s] == key:
            return True
        s = (s + 1) & mask
    return False


@njit(cache=True)
def _grow(keys, vals):
    nk = np.full(keys.shape[0] * 2, -1, dtype=np.int64)
    nv = np.zeros(keys.shape[0] * 2, dtype=np.int64)
    for i in range(keys.shape[0]):
        if keys[i] != -1:
            _table_insert(nk, nv, keys[i], vals[i])
    return nk, nv


@njit(inline="always")
def _sup_coord(key, d):
    m = 0
    for _ in range(d):
        c = abs((key & KEY_MASK) - KEY_BIAS)
        if c > m:
            m = c
        key = key >> KEY_BITS
    return m


@njit(nogil=True, cache=True)
def survival_run(seed, p, offset_keys, origin_key, d, g_max, cap, escape):
    """Epidemic from a single infected site with nothing recovered.

    Returns (last generation with a nonempty infected set, outcome code,
    number of sites ever infected).  The run stops early when the infected
    set exceeds ``cap`` sites (recorded as CAPPED) or, if ``escape`` > 0, when
    an infected site reaches sup-norm distance ``escape`` (ESCAPED).
    """
    keys = np.full(1024, -1, dtype=np.int64)
    vals = np.zeros(1024, dtype=np.int64)
    filled = 1
    _table_insert(keys, vals, origin_key, 0)
    cur = np.empty(64, dtype=np.int64)
    cur[0] = origin_key
    ncur = 1
    nxt = np.empty(64, dtype=np.int64)
    V = offset_keys.shape[0]
    for gen in range(g_max):
        nnxt = 0
        for i in range(ncur):
            x = cur[i]
            for j in range(V):
                y = x + offset_keys[j]
                if _table_has(keys, y):
                    continue
                if edge_u(seed, x, y) < p:
                    if 2 * (filled + 1) > keys.shape[0]:
                        keys, vals = _grow(keys, vals)
                    _table_insert(keys, vals, y, gen + 1)
                    filled += 1
                    if nnxt == nxt.shape[0]:
                        tmp = np.empty(2 * nnxt, dtype=np.int64)
                        tmp[:nnxt] = nxt[:nnxt]
                        nxt = tmp
                    nxt[nnxt] = y
                    nnxt += 1
                    if escape > 0 and _sup_coord(y, d) >= escape:
                        return gen + 1, ESCAPED, filled
        if nnxt == 0:
            return gen, EXTINCT, filled
        if cap > 0 and nnxt > cap:
            return g_max, CAPPED, filled
        cur, nxt = nxt, cur
        ncur = nnxt
    return g_max, HORIZON, filled


@njit(nogil=True, cache=True)
def survival_batch(seeds, p, offset_keys, origin_key, d, g_max, cap, escape):
    n = seeds.shape[0]
    last = np.empty(n, dtype=np.int64)
    code = np.empty(n, dtype=np.int64)
    size = np.empty(n, dtype=np.int64)
    for i in range(n):
        a, b, c = survival_run(seeds[i], p, offset_keys, origin_key, d, g_max, cap, escape)
        last[i] = a
        code[i] = b
        size[i] = c
    return last, code, size


@njit(nogil=True, cache=True)
def survival_run_direct(rng, p, offset_keys, origin_key, d, g_max, cap, escape):
    """Same law as ``survival_run`` without a shared edge environment.

    Along one epidemic every edge is examined at most once (from its infected
    end while the other end is susceptible), so each infected site may draw a
    fresh Binomial(V, p) set of distinct directions instead of V hash values.
    """
    V = offset_keys.shape[0]
    keys = np.full(1024, -1, dtype=np.int64)
    vals = np.zeros(1024, dtype=np.int64)
    filled = 1
    _table_insert(keys, vals, origin_key, 0)
    cur = np.empty(64, dtype=np.int64)
    cur[0] = origin_key
    ncur = 1
    nxt = np.empty(64, dtype=np.int64)
    mark = np.zeros(V, dtype=np.bool_)
    picks = np.empty(V, dtype=np.int64)
    for gen in range(g_max):
        nnxt = 0
        for i in range(ncur):
            x = cur[i]
            c = rng.binomial(V, p)
            for j in range(V - c, V):
                t = rng.integers(0, j + 1)
                if mark[t]:
                    t = j
                mark[t] = True
                picks[j - (V - c)] = t
            for q in range(c):
                mark[picks[q]] = False
            for q in range(c):
                y = x + offset_keys[picks[q]]
                if _table_has(keys, y):
                    continue
                if 2 * (filled + 1) > keys.shape[0]:
                    keys, vals = _grow(keys, vals)
                _table_insert(keys, vals, y, gen + 1)
                filled += 1
                if nnxt == nxt.shape[0]:
                    tmp = np.empty(2 * nnxt, dtype=np.int64)
                    tmp[:nnxt] = nxt[:nnxt]
                    nxt = tmp
                nxt[nnxt] = y
                nnxt += 1
                if escape > 0 and _sup_coord(y, d) >= escape:
                    return gen + 1, ESCAPED, filled
        if nnxt == 0:
            return gen, EXTINCT, filled
        if cap > 0 and nnxt > cap:
            return g_max, CAPPED, filled
        cur, nxt = nxt, cur
        ncur = nnxt
    return g_max, HORIZON, filled


@njit(nogil=True, cache=True)
def survival_batch_direct(rng, n, p, offset_keys, origin_key, d, g_max, cap, escape):
    last = np.empty(n, dtype=np.int64)
    code = np.empty(n, dtype=np.int64)
    size = np.empty(n, dtype=np.int64)
    for i in range(n):
        a, b, c = survival_run_direct(rng, p, offset_keys, origin_key, d, g_max, cap, escape)
        last[i] = a
        code[i] = b
        size[i] = c
    return last, code, size
