"""Uniform-step random walk on Z^d / R: transition tables, generator, kernels.

All dense grids are centred arrays: an array of half-width r along every
axis holds the values at scaled sites k with |k_i| <= r, entry k at index
k + r.  One step of the walk is a (2R+1)^d box sum minus the centre cell,
evaluated with cumulative sums along each axis in turn.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import zeta

from .lattice import LatticeParams, as_sites

ETA = 1.0 / 8.0
CELL_BUDGET = 60_000_000


@dataclass(frozen=True)
class RunParams:
    lattice: LatticeParams
    theta: float = 0.0
    T: float = 1.0

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError("theta must be nonnegative")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if not 0 < self.p <= 1:
            raise ValueError(f"edge probability {self.p} outside (0, 1]")

    @property
    def d(self) -> int:
        return self.lattice.d

    @property
    def R(self) -> int:
        return self.lattice.R

    @property
    def V(self) -> int:
        return self.lattice.volume

    @property
    def drift(self) -> float:
        """theta / R^(d-1), the per-generation excess of the mean offspring."""
        return self.theta / self.R ** (self.d - 1)

    @property
    def p(self) -> float:
        return (1.0 + self.drift) / self.V

    @property
    def T_theta_R(self) -> int:
        if self.theta == 0:
            raise ValueError("time horizon needs theta > 0")
        return int(math.floor(self.T * self.R ** (self.d - 1) / self.theta))

    @property
    def R_theta(self) -> float:
        if self.theta == 0:
            raise ValueError("spatial scale needs theta > 0")
        return math.sqrt(self.R ** (self.d - 1) / self.theta)

    @property
    def f_d(self) -> float:
        return math.sqrt(self.theta) if self.d == 2 else math.log(self.theta)

    @property
    def beta_d(self) -> float:
        return math.log(self.R) if self.d == 2 else 1.0

    @property
    def in_asymptotic_regime(self) -> bool:
        return self.theta >= 100 and self.R >= 4 * self.theta


# ---------------------------------------------------------------- grid helpers


def _boxsum(a: np.ndarray, R: int) -> np.ndarray:
    """Sums over every (2R+1)^d window fully inside ``a`` ('valid' mode)."""
    w = 2 * R + 1
    for ax in range(a.ndim):
        cs = np.cumsum(a, axis=ax)
        pad = [(0, 0)] * a.ndim
        pad[ax] = (1, 0)
        cs = np.pad(cs, pad)
        hi = [slice(None)] * a.ndim
        lo = [slice(None)] * a.ndim
        hi[ax] = slice(w, None)
        lo[ax] = slice(0, -w)
        a = cs[tuple(hi)] - cs[tuple(lo)]
    return a


def _resize(a: np.ndarray, r_in: int, r_out: int) -> np.ndarray:
    """Crop or zero-pad a centred array from half-width r_in to r_out."""
    if r_out >= r_in:
        return np.pad(a, r_out - r_in)
    s = r_in - r_out
    return a[tuple(slice(s, a.shape[i] - s) for i in range(a.ndim))]


def neighbor_mean(values: np.ndarray, R: int, V: int) -> np.ndarray:
    """(1/V) sum_e values(x + e) on the grid dilated by R on every side."""
    P = np.pad(values, 2 * R)
    centre = P[tuple(slice(R, P.shape[i] - R) for i in range(P.ndim))]
    return (_boxsum(P, R) - centre) / V


def _step(p: np.ndarray, r_in: int, r_out: int, R: int, V: int) -> np.ndarray:
    """One walk step, returning half-width r_out.

    Valid when p vanishes outside r_in or when r_in >= r_out + R.
    """
    P = _resize(p, r_in, r_out + R)
    centre = P[tuple(slice(R, P.shape[i] - R) for i in range(P.ndim))]
    q = (_boxsum(P, R) - centre) / V
    q = 0.5 * (q + np.flip(q))
    np.maximum(q, 0.0, out=q)
    return q


def _check_budget(radius: int, d: int):
    if (2 * radius + 1) ** d > CELL_BUDGET:
        raise MemoryError(f"grid of half-width {radius} in d={d} exceeds the cell budget")


# --------------------------------------------------------- site functions


class GridFunction:
    """Real function on a finite box of sites, stored densely.

    Outside the box the function is either exactly zero (``outside='zero'``)
    or undefined (``outside='error'``), in which case lookups raise.
    """

    def __init__(self, values: np.ndarray, origin: Sequence[int], outside: str = "zero"):
        self.values = np.asarray(values, dtype=np.float64)
        self.origin = np.asarray(origin, dtype=np.int64)
        if outside not in ("zero", "error"):
            raise ValueError(outside)
        self.outside = outside
        self.d = self.values.ndim

    @classmethod
    def centred(cls, values, radius: int, center=None, outside="zero"):
        d = np.ndim(values)
        c = np.zeros(d, np.int64) if center is None else np.asarray(center, np.int64)
        return cls(values, c - radius, outside)

    @classmethod
    def from_mapping(cls, mapping: Mapping[tuple, float], d: int, outside="zero"):
        if not mapping:
            return cls(np.zeros((1,) * d), np.zeros(d, np.int64), outside)
        sites = as_sites(list(mapping.keys()), d)
        lo, hi = sites.min(axis=0), sites.max(axis=0)
        vals = np.zeros(tuple(hi - lo + 1))
        vals[tuple((sites - lo).T)] = list(mapping.values())
        return cls(vals, lo, outside)

    @property
    def upper(self) -> np.ndarray:
        return self.origin + np.array(self.values.shape) - 1

    def __call__(self, sites) -> np.ndarray:
        arr = as_sites(sites, self.d)
        rel = arr - self.origin
        inside = np.all((rel >= 0) & (rel < np.array(self.values.shape)), axis=1)
        if not inside.all():
            if self.outside == "error":
                bad = arr[~inside][0]
                raise KeyError(f"site {tuple(int(v) for v in bad)} outside the table window")
            out = np.zeros(arr.shape[0])
            out[inside] = self.values[tuple(rel[inside].T)]
            return out
        return self.values[tuple(rel.T)]

    def support_sites(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.argwhere(self.values != 0)
        return idx + self.origin, self.values[tuple(idx.T)]


@dataclass(frozen=True)
class ConstantFunction:
    c: float

    def __call__(self, sites) -> np.ndarray:
        return np.full(np.asarray(sites).reshape(-1, np.shape(sites)[-1]).shape[0], float(self.c))


def box_indicator(center: Sequence[float], radius: float, params: LatticeParams):
    """Indicator of the closed sup-norm box Q_radius(center) as a site function."""
    c = np.asarray(center, dtype=np.float64)

    def f(sites):
        arr = as_sites(sites, params.d)
        return np.all(np.abs(arr / params.R - c) <= radius, axis=1).astype(np.float64)

    return f


# ------------------------------------------------------------ transitions


def p1(k: Sequence[int], params: LatticeParams) -> float:
    dist = max(abs(int(v)) for v in k)
    return 1.0 / params.volume if 0 < dist <= params.R else 0.0


@dataclass
class TransitionTable:
    n: int
    radius: int
    values: np.ndarray
    lattice: LatticeParams

    @property
    def full_support(self) -> bool:
        return self.radius >= self.n * self.lattice.R

    def __call__(self, sites) -> np.ndarray:
        outside = "zero" if self.full_support else "error"
        return GridFunction.centred(self.values, self.radius, outside=outside)(sites)

    def to_dict(self) -> dict[tuple, float]:
        idx = np.argwhere(self.values > 0)
        return {tuple(int(v) for v in row - self.radius): float(self.values[tuple(row)]) for row in idx}

    @property
    def mass(self) -> float:
        return math.fsum(self.values.ravel())


def iter_transitions(n_max: int, lattice: LatticeParams, window: int | None = None):
    """Yield p_0, ..., p_{n_max}, each on the common half-width ``window``.

    The default window is the full support n_max*R.  Intermediate grids are
    kept no wider than needed to produce the later tables exactly.
    """
    R, V, d = lattice.R, lattice.volume, lattice.d
    if n_max < 0:
        raise ValueError("n must be nonnegative")
    W = n_max * R if window is None else int(window)
    peak = min(n_max * R, (W + n_max * R) // 2 + R)
    _check_budget(max(W, peak), d)
    p = np.zeros((1,) * d)
    p[(0,) * d] = 1.0
    r = 0
    yield _resize(p, 0, W)
    for n in range(1, n_max + 1):
        r_next = min(n * R, W + (n_max - n) * R)
        p = _step(p, r, r_next, R, V)
        r = r_next
        yield _resize(p, r, W)


def transition_stack(n_max: int, lattice: LatticeParams, window: int | None = None):
    """p_0, ..., p_{n_max} as a list (see ``iter_transitions``)."""
    return list(iter_transitions(n_max, lattice, window))


def transition_exact(n: int, params, window: int | None = None) -> TransitionTable:
    lattice = params.lattice if isinstance(params, RunParams) else params
    W = n * lattice.R if window is None else int(window)
    for vals in iter_transitions(n, lattice, W):
        pass
    return TransitionTable(n, W, vals, lattice)


def lambda0(lattice: LatticeParams) -> float:
    R, d = lattice.R, lattice.d
    return (R * (R + 1) / R**2) * ((2 * R + 1) ** d / lattice.volume)


def gaussian_approx(n: int, k, params) -> np.ndarray | float:
    """Gaussian surrogate for p_n at scaled site(s) k."""
    lattice = params.lattice if isinstance(params, RunParams) else params
    if n < 1:
        raise ValueError("n must be at least 1")
    R, d = lattice.R, lattice.d
    lam = lambda0(lattice)
    x2 = np.sum((np.asarray(k, dtype=np.float64) / R) ** 2, axis=-1)
    pref = (3.0 / lam) ** (d / 2) * (2 * math.pi) ** (-d / 2) * n ** (-d / 2) * R ** (-d)
    return pref * np.exp(-3.0 * x2 / (2.0 * n * lam))


def gaussian_error(n: int, params) -> float:
    """sup_k |p_n(k) - gaussian_approx(n, k)| over the full support."""
    lattice = params.lattice if isinstance(params, RunParams) else params
    table = transition_exact(n, lattice)
    r = table.radius
    axes = np.meshgrid(*([np.arange(-r, r + 1)] * lattice.d), indexing="ij")
    k = np.stack(axes, axis=-1)
    return float(np.max(np.abs(table.values - gaussian_approx(n, k, lattice))))


# --------------------------------------------------------------- generator


def generator_apply(f: Callable, x, params) -> np.ndarray | float:
    """L f(x) = (1/V) sum_e (f(x+e) - f(x)) at one site or an (n, d) array."""
    lattice = params.lattice if isinstance(params, RunParams) else params
    arr = np.asarray(x, dtype=np.int64)
    single = arr.ndim == 1
    xs = as_sites(arr, lattice.d)
    off = lattice.offsets
    nb = (xs[:, None, :] + off[None, :, :]).reshape(-1, lattice.d)
    fn = np.asarray(f(nb), dtype=np.float64).reshape(xs.shape[0], -1)
    fx = np.asarray(f(xs), dtype=np.float64)
    out = fn.sum(axis=1) / lattice.volume - fx
    return float(out[0]) if single else out


def neighbor_average(f: Callable, sites, lattice: LatticeParams) -> np.ndarray:
    """f-bar(y) = (1/V) sum_e f(y + e) for each row of ``sites``."""
    xs = as_sites(sites, lattice.d)
    if xs.shape[0] == 0:
        return np.zeros(0)
    nb = (xs[:, None, :] + lattice.offsets[None, :, :]).reshape(-1, lattice.d)
    return np.asarray(f(nb), dtype=np.float64).reshape(xs.shape[0], -1).sum(axis=1) / lattice.volume


# ------------------------------------------------------------------ kernels


@dataclass
class KernelTable:
    kind: str
    anchor: tuple
    m: int
    values: GridFunction
    correction: GridFunction
    params: RunParams
    tail: float = 0.0
    meta: dict = field(default_factory=dict)

    def __call__(self, sites) -> np.ndarray:
        return self.values(sites)

    @property
    def radius(self) -> int:
        return (self.values.values.shape[0] - 1) // 2


def _kernel_window(m: int, R: int, window: int | None) -> tuple[int, str]:
    full = (m + 1) * R
    if window is None or window >= full:
        return full, "zero"
    if window < R:
        raise ValueError(f"window {window} narrower than one step")
    return int(window), "error"


def _anchored(vals, W, a, outside):
    return GridFunction.centred(vals, W, center=a, outside=outside)


@lru_cache(maxsize=8)
def _kernel_arrays(kind: str, lattice: LatticeParams, theta: float, m: int, W: int):
    """Centred kernel values and leftover term on half-width W (cached, read-only)."""
    R, V = lattice.R, lattice.volume
    q = math.exp(-theta / R) if kind == "g" else 1.0
    vals = None
    corr = None
    peak = 0.0
    for n, pn in enumerate(iter_transitions(m + 1, lattice, W)):
        if vals is None:
            vals = np.zeros_like(pn)
        if 1 <= n <= m:
            vals += q**n * pn
        if n == m + 1:
            corr = pn
            peak = float(pn.max())
    if kind == "phi":
        vals *= R * V
        corr = R * V * corr
    else:
        vals *= V
        corr = V * q**m * corr
    vals.setflags(write=False)
    corr.setflags(write=False)
    return vals, corr, peak


def kernel_phi(a, m: int, window: int | None, params: RunParams) -> KernelTable:
    """Truncated d=3 potential kernel R*V*sum_{n=1}^m p_n(x - a) and its leftover term."""
    if params.d != 3:
        raise ValueError("kernel_phi is the d=3 kernel")
    R, V = params.R, params.V
    W, outside = _kernel_window(m, R, window)
    vals, corr, _ = _kernel_arrays("phi", params.lattice, 0.0, m, W)
    lam = lambda0(params.lattice)
    # local-CLT estimate of the discarded sum_{n>m} R V sup p_n
    tail = R * V * (3 / (2 * math.pi * lam)) ** 1.5 * R**-3 * 2 / math.sqrt(max(m, 1))
    return KernelTable("phi", tuple(a), m, _anchored(vals, W, a, outside), _anchored(corr, W, a, outside), params, tail)


def depth_for_tail(params: RunParams, tol: float = 1e-10) -> int:
    """Smallest m whose geometric tail bound for the d=2 kernel is below tol."""
    q = math.exp(-params.theta / params.R)
    if q >= 1:
        raise ValueError("the d=2 kernel needs theta > 0")
    # V * q^(m+1)/(1-q) * sup p_{m+1} <= q^(m+1)/(1-q)
    return max(0, math.ceil(math.log(tol * (1 - q)) / math.log(q)) - 1)


def kernel_g(a, m: int, window: int | None, params: RunParams) -> KernelTable:
    """Truncated d=2 kernel V*sum_{n=1}^m e^{-n theta/R} p_n(x - a) and its leftover term."""
    if params.d != 2:
        raise ValueError("kernel_g is the d=2 kernel")
    if params.theta <= 0:
        raise ValueError("kernel_g needs theta > 0")
    R, V = params.R, params.V
    W, outside = _kernel_window(m, R, window)
    vals, corr, peak = _kernel_arrays("g", params.lattice, float(params.theta), m, W)
    q = math.exp(-params.theta / R)
    tail = V * q ** (m + 1) / (1 - q) * peak
    return KernelTable("g", tuple(a), m, _anchored(vals, W, a, outside), _anchored(corr, W, a, outside), params, tail)


# ---------------------------------------------------------- series helpers


def _exp_zeta_tail(s: float, c: np.ndarray, K: int) -> np.ndarray:
    """sum_{k>K} k^-s e^{-c/k} via the expansion sum_j (-c)^j/j! zeta(s+j, K+1)."""
    c = np.asarray(c, dtype=np.float64)
    out = np.zeros_like(c)
    term_c = np.ones_like(c)
    for j in range(60):
        z = zeta(s + j, K + 1)
        term = term_c * z
        out += term
        if np.all(np.abs(term) <= 1e-17 * np.abs(out)):
            break
        term_c = term_c * (-c) / (j + 1)
    return out


def exp_power_series(s: float, c, cells: int = 1 << 22) -> np.ndarray:
    """sum_{k>=1} k^-s e^{-c/k} for s > 1 and c >= 0 (vectorized over c).

    Terms up to K >= 20 max(c) are summed directly; the rest comes from the
    Hurwitz-zeta expansion, which converges fast once c/K <= 1/20.
    """
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))
    order = np.argsort(c, kind="stable")
    cs = c[order]
    res = np.empty_like(cs)
    start = 0
    while start < cs.size:
        K = int(max(64, math.ceil(40 * cs[start])))
        stop = max(int(np.searchsorted(cs, K / 20.0, side="right")), start + 1)
        block = cs[start:stop]
        acc = np.zeros_like(block)
        width = max(1, cells // block.size)
        for k0 in range(1, K + 1, width):
            k = np.arange(k0, min(k0 + width, K + 1), dtype=np.float64)
            for b0 in range(0, block.size, cells):
                bb = block[b0 : b0 + cells]
                acc[b0 : b0 + cells] += (k[None, :] ** -s * np.exp(-bb[:, None] / k[None, :])).sum(axis=1)
        res[start:stop] = acc + _exp_zeta_tail(s, block, K)
        start = stop
    out = np.empty_like(c)
    out[order] = res
    return out


def series_bound_check(alpha: float, r: float) -> tuple[float, float]:
    """S(alpha, r) = sum_k k^{-1-alpha} e^{-r/k} and r^alpha * S."""
    if alpha <= 0 or r < 1 / 64:
        raise ValueError("need alpha > 0 and r >= 1/64")
    S = float(exp_power_series(1 + alpha, [r])[0])
    return S, r**alpha * S


def _dist2(u, sites, R: int) -> np.ndarray:
    x = as_sites(sites) / R
    return np.sum((x - np.asarray(u, dtype=np.float64)) ** 2, axis=1)


def majorant_from_dist2(r2, params: RunParams, d: int | None = None) -> np.ndarray:
    d = params.d if d is None else d
    r2 = np.atleast_1d(np.asarray(r2, dtype=np.float64))
    if d == 3:
        return params.R * exp_power_series(1.5, r2 / 32.0)
    if params.theta <= 0:
        raise ValueError("the d=2 majorant needs theta > 0")
    q = math.exp(-params.theta / params.R)
    total = np.zeros_like(r2)
    block = 512
    step = max(1, (1 << 21) // block)
    n0 = 1
    while True:
        n = np.arange(n0, n0 + block, dtype=np.float64)
        w = q**n / n
        for b0 in range(0, r2.size, step):
            rr = r2[b0 : b0 + step]
            total[b0 : b0 + step] += w @ np.exp(-rr[None, :] / (32.0 * n[:, None]))
        n_last = n0 + block - 1
        bound = q ** (n_last + 1) / ((n_last + 1) * (1 - q))
        if bound < 1e-300 or np.all(bound < 1e-15 * total):
            return total
        n0 += block
        if n0 > 10_000_000:
            raise RuntimeError("majorant series failed to converge")


def majorant_g(u, x, params: RunParams, d: int | None = None) -> float:
    """g_{u,d}(x) at one scaled site x (u in real coordinates)."""
    return float(majorant_from_dist2(_dist2(u, [x], params.R), params, d)[0])


def majorant_g_many(u, sites, params: RunParams) -> np.ndarray:
    return majorant_from_dist2(_dist2(u, sites, params.R), params)


def f_eta(a, sites, R: int, eta: float = ETA) -> np.ndarray:
    """sum_k k^{-2-eta} exp(-|y - a|^2 / (64 k)) at each site y."""
    return exp_power_series(2 + eta, _dist2(np.asarray(a) / R, sites, R) / 64.0)


def green_majorant(a, sites, R: int, eta: float = ETA) -> np.ndarray:
    """sum_k k^{-1-eta} exp(-|x - a|^2 / (64 k)), the comparison profile for psi."""
    return exp_power_series(1 + eta, _dist2(np.asarray(a) / R, sites, R) / 64.0)


def kernel_psi(a, m: int, window: int, params: RunParams, eta: float = ETA) -> KernelTable:
    """Truncated Green potential of f_a restricted to the half-width ``window``.

    f is cut to the window; psi^(m) = sum_{n<=m} p_n * f is then exact on
    its full support, and the leftover term is p_{m+1} * f.
    """
    if params.d != 3:
        raise ValueError("the Green kernel is used in d=3")
    R = params.R
    _check_budget(window + (m + 1) * R, params.d)
    ax = np.arange(-window, window + 1)
    grid = np.stack(np.meshgrid(*([ax] * params.d), indexing="ij"), axis=-1).reshape(-1, params.d)
    f = f_eta(np.zeros(params.d), grid, R, eta).reshape((2 * window + 1,) * params.d)
    vals, corr = _green_sum(f, m, params.lattice)
    Wp = window + (m + 1) * R
    psi = _anchored(_resize(vals, window + m * R, Wp), Wp, a, "zero")
    leftover = _anchored(corr, Wp, a, "zero")
    # E f(x+S_n) decays like n^{-1-eta}; extrapolate the tail from the first dropped term
    tail = float(corr.max()) * (m + 1) / eta
    return KernelTable("psi", tuple(a), m, psi, leftover, params, tail, {"eta": eta, "f_window": window})


def _green_sum(f: np.ndarray, m: int, lattice: LatticeParams):
    R, V = lattice.R, lattice.volume
    acc = f.copy()
    cur = f
    for _ in range(m):
        cur = neighbor_mean(cur, R, V)
        acc = np.pad(acc, R) + cur
    nxt = neighbor_mean(cur, R, V)
    return acc, nxt


def green_apply(f: GridFunction, x, m: int, params) -> tuple[float, float]:
    """sum_{n=0}^m sum_y p_n(x - y) f(y) for a finitely supported f.

    Returns the value and the leftover sum_y p_{m+1}(x - y) f(y).
    """
    lattice = params.lattice if isinstance(params, RunParams) else params
    acc, nxt = _green_sum(f.values, m, lattice)
    R = lattice.R
    g_acc = GridFunction(acc, f.origin - m * R, "error")
    g_nxt = GridFunction(nxt, f.origin - (m + 1) * R, "error")
    return float(g_acc([x])[0]), float(g_nxt([x])[0])


# ----------------------------------------------------------------- G-weight


def g_weight(phi, n: int, params) -> float:
    """G(phi, n) = 3 sup phi + sum_{k=1}^n sup_y sum_z phi(z) p_k(y - z).

    ``phi`` is a nonnegative constant or a GridFunction with zero outside.
    """
    lattice = params.lattice if isinstance(params, RunParams) else params
    if isinstance(phi, ConstantFunction):
        phi = phi.c
    if np.isscalar(phi):
        if phi < 0:
            raise ValueError("phi must be nonnegative")
        return 3.0 * phi + n * phi
    vals = phi.values
    if np.any(vals < 0):
        raise ValueError("phi must be nonnegative")
    terms = [3.0 * float(vals.max(initial=0.0))]
    cur = vals
    for _ in range(n):
        cur = neighbor_mean(cur, lattice.R, lattice.volume)
        terms.append(float(cur.max(initial=0.0)))
    return math.fsum(terms)


# -------------------------------------------------------------------- dumps


def dump_table_csv(table, path, **meta):
    """Write a transition or kernel table as k_1..k_d,value rows."""
    if isinstance(table, TransitionTable):
        grid = GridFunction.centred(table.values, table.radius)
        head = {"kind": "transition", "n": table.n, "d": table.lattice.d, "R": table.lattice.R}
    else:
        grid = table.values
        head = {"kind": table.kind, "m": table.m, "d": table.params.d, "R": table.params.R, "theta": table.params.theta}
    head.update(meta)
    sites, vals = grid.support_sites()
    d = grid.d
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"{k}={v}" for k, v in head.items()])
        w.writerow([f"k_{i + 1}" for i in range(d)] + ["value"])
        for s, v in zip(sites, vals):
            w.writerow([int(c) for c in s] + [repr(float(v))])
