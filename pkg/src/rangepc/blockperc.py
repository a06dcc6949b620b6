"""Renormalization blocks: the quarter-plane grid, good events of an epidemic
segment, the occupied-site iteration and oriented site percolation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import sir
from .brw import Population, thin
from .lattice import BoxSpec, LatticeParams, SparseCounts, box_contains_many, decode, encode, unit_box_of
from .randwalk import RunParams, majorant_g_many

GridSite = tuple[int, int]


# ------------------------------------------------------------------ grid


def gamma_order(i: int) -> GridSite:
    """i-th site (1-based) of the quarter plane ordered by l1 norm, then first coordinate."""
    if i < 1:
        raise ValueError("index starts at 1")
    j = i - 1
    s = int((math.isqrt(8 * j + 1) - 1) // 2)
    x1 = j - s * (s + 1) // 2
    return (x1, s - x1)


def gamma_index(x: GridSite) -> int:
    x1, x2 = x
    if x1 < 0 or x2 < 0:
        raise ValueError("grid sites have nonnegative coordinates")
    s = x1 + x2
    return s * (s + 1) // 2 + x1 + 1


def precedes(x: GridSite, y: GridSite) -> bool:
    return (x[0] + x[1], x[0]) < (y[0] + y[1], y[0])


def offspring(x: GridSite) -> tuple[GridSite, GridSite]:
    return (x[0], x[1] + 1), (x[0] + 1, x[1])


def embed(x: GridSite, d: int) -> tuple[int, ...]:
    return tuple(x) + (0,) * (d - 2)


# ---------------------------------------------------------------- config


@dataclass(frozen=True)
class BlockConfig:
    T: float
    theta: float
    K: float
    chi: float
    m: float
    M: float
    eps0: float = 0.01

    def __post_init__(self):
        for name in ("T", "theta", "K", "chi", "m", "M"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def params(self, lattice: LatticeParams) -> RunParams:
        return RunParams(lattice, self.theta, self.T)

    def f_d(self, d: int) -> float:
        return math.sqrt(self.theta) if d == 2 else math.log(self.theta)

    def M_tilde(self, d: int) -> int:
        lf = math.log(self.f_d(d))
        if lf <= 0:
            raise ValueError("theta too small: log f_d(theta) must be positive")
        return int(math.floor(self.M * math.sqrt(lf))) + 1

    def kappa(self, d: int) -> float:
        return (4 * self.M_tilde(d) + 4) ** 2 * self.chi

    def initial_size(self, lattice: LatticeParams) -> int:
        """Smallest admissible |eta0|: ceil(R^{d-1} f_d / theta)."""
        return max(1, math.ceil(lattice.R ** (lattice.d - 1) * self.f_d(lattice.d) / self.theta))


def cube(x: GridSite, prm: RunParams, scale: float = 1.0) -> BoxSpec:
    """Q_{scale R_theta}(x R_theta) for a grid site x."""
    c = np.array(embed(x, prm.d), dtype=np.float64) * prm.R_theta
    return BoxSpec(tuple(c), scale * prm.R_theta)


# ---------------------------------------------------------- admissibility


@dataclass
class AdmissibilityResult:
    admissible: bool
    worst_u: tuple
    worst_value: float
    threshold: float
    surrogate: bool = True  # checked on a grid of u, not all of R^d


def default_u_grid(sites: np.ndarray, R: int) -> np.ndarray:
    """Unit-spaced points covering the support dilated by 2, plus one far point."""
    d = sites.shape[1]
    x = sites / R
    lo = np.floor(x.min(axis=0)) - 2
    hi = np.ceil(x.max(axis=0)) + 2
    axes = [np.arange(lo[i], hi[i] + 1) for i in range(d)]
    g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    far = hi + 100.0
    return np.vstack([g, far[None, :]])


def admissibility_check(measure: SparseCounts, m: float, params: RunParams, u_grid=None) -> AdmissibilityResult:
    """max over u in the grid of mu(g_{u,d}) against m R^{d-1} / theta^{1/4}."""
    thr = m * params.R ** (params.d - 1) / params.theta**0.25
    if measure.mass == 0:
        return AdmissibilityResult(True, (), 0.0, thr)
    us = default_u_grid(measure.sites, params.R) if u_grid is None else np.atleast_2d(np.asarray(u_grid, float))
    best, arg = -1.0, None
    for u in us:
        v = math.fsum(measure.counts * majorant_g_many(u, measure.sites, params))
        if v > best:
            best, arg = v, tuple(float(c) for c in u)
    return AdmissibilityResult(best <= thr, arg, best, thr)


# ---------------------------------------------------------- initial state


def build_eta0(config: BlockConfig, lattice: LatticeParams, rng: np.random.Generator,
               size: int | None = None, x: GridSite = (0, 0)) -> np.ndarray:
    """Random site set in Q_{R_theta}(x R_theta) of size ceil(R^{d-1} f_d/theta)
    with at most K beta_d(R) sites in every unit box.  Returns (n, d) sites."""
    prm = config.params(lattice)
    n = config.initial_size(lattice) if size is None else size
    box = cube(x, prm)
    rng_axes = [box.axis_range(i, lattice.R) for i in range(lattice.d)]
    cap = math.floor(config.K * prm.beta_d)
    if cap < 1:
        raise ValueError("K beta_d(R) < 1 leaves no room for any site")
    total = math.prod(hi - lo + 1 for lo, hi in rng_axes)
    if n > total:
        raise ValueError("box too small for the requested initial size")
    chosen: dict[int, None] = {}
    per_box: dict[tuple, int] = {}
    tries = 0
    while len(chosen) < n:
        tries += 1
        if tries > 100 * n + 10_000:
            raise RuntimeError("could not place the initial set under the unit-box cap")
        k = np.array([rng.integers(lo, hi + 1) for lo, hi in rng_axes], dtype=np.int64)
        key = int(encode(k[None, :], lattice.d)[0])
        if key in chosen:
            continue
        b = tuple(int(v) for v in unit_box_of(k, lattice.R))
        if per_box.get(b, 0) >= cap:
            continue
        per_box[b] = per_box.get(b, 0) + 1
        chosen[key] = None
    return decode(np.sort(np.fromiter(chosen, dtype=np.int64)), lattice.d)


def check_eta0(sites, config: BlockConfig, lattice: LatticeParams, x: GridSite = (0, 0)) -> list[str]:
    """Clauses of the initial-condition recipe that ``sites`` violates (empty if none)."""
    prm = config.params(lattice)
    sites = np.asarray(sites, dtype=np.int64).reshape(-1, lattice.d)
    bad = []
    if sites.shape[0] and not np.all(box_contains_many(cube(x, prm), sites, lattice)):
        bad.append("outside Q_{R_theta}")
    lo = lattice.R ** (lattice.d - 1) * config.f_d(lattice.d) / config.theta
    if not lo <= sites.shape[0] <= lo + 1:
        bad.append("size")
    if sites.shape[0]:
        _, cnt = np.unique(unit_box_of(sites, lattice.R), axis=0, return_counts=True)
        if cnt.max() > config.K * prm.beta_d:
            bad.append("unit-box cap")
    return bad


# ----------------------------------------------------------- good events


@dataclass
class GoodEventResult:
    F1: bool
    F2: bool
    F3: bool
    F4: bool
    N_kappa: bool
    stopped_at: int
    sup_count: int
    thinned_mass: dict = field(default_factory=dict)

    @property
    def good(self) -> bool:
        return self.F1 and self.F2 and self.F3 and self.F4

    def to_dict(self):
        return {"F1": self.F1, "F2": self.F2, "F3": self.F3, "F4": self.F4, "N_kappa": self.N_kappa,
                "good": self.good, "stopped_at": self.stopped_at, "sup_count": self.sup_count,
                "thinned_mass": {str(k): v for k, v in self.thinned_mass.items()}}


def _terminal_checks(terminal: np.ndarray, y0_size: int, x: GridSite, config: BlockConfig, prm: RunParams,
                     u_grid=None):
    d = prm.d
    sites = decode(terminal, d)
    pop = Population(SparseCounts(sites, np.ones(len(sites), np.int64), d))
    hat = thin(pop, config.K, prm)
    f3, f4 = True, True
    masses = {}
    for z in offspring(x):
        q = cube(z, prm)
        inside_hat = box_contains_many(q, hat.sites, prm.lattice) if hat.mass else np.zeros(0, bool)
        masses[z] = int(hat.counts.counts[inside_hat].sum()) if hat.mass else 0
        f3 &= masses[z] >= y0_size
        inside = box_contains_many(q, sites, prm.lattice) if len(sites) else np.zeros(0, bool)
        restr = SparseCounts(sites[inside], np.ones(int(inside.sum()), np.int64), d)
        f4 &= admissibility_check(restr, config.m, prm, u_grid).admissible
    return f3, f4, masses, hat


class _SegmentWatch:
    """Tracks the stopping rule of a segment: neighbourhood occupation above
    chi R or support leaving Q_{M~ R_theta}(x R_theta)."""

    def __init__(self, x: GridSite, config: BlockConfig, prm: RunParams):
        self.box = cube(x, prm, config.M_tilde(prm.d))
        self.limit = config.chi * prm.R
        self.prm = prm
        self.cum = np.zeros(0, np.int64)
        self.sup = 0
        self.escaped = False

    def add(self, keys: np.ndarray) -> bool:
        """Add Y_n; True when the rule fires."""
        if keys.size == 0:
            return False
        self.cum = np.union1d(self.cum, keys)
        if not np.all(box_contains_many(self.box, decode(keys, self.prm.d), self.prm.lattice)):
            self.escaped = True
        self.sup = sir.sup_neighborhood(self.cum, self.prm.lattice)
        return self.escaped or self.sup > self.limit


def good_event_probe(eta0, rho0, config: BlockConfig, oracle: sir.EdgeOracle, x: GridSite = (0, 0),
                     u_grid=None) -> GoodEventResult:
    """Run the epidemic from (eta0, rho0) for T_theta^R generations and evaluate F1-F4 and N(kappa)."""
    lat = oracle.lattice
    prm = config.params(lat)
    d = lat.d
    st = sir.EpidemicState.from_sites(eta0, rho0, d)
    y0 = st.infected.size
    T = prm.T_theta_R
    watch = _SegmentWatch(x, config, prm)
    fired_at = None
    if watch.add(st.infected):
        fired_at = 0
    for n in range(1, T + 1):
        st = sir.sir_step(st, oracle)
        if watch.add(st.infected) and fired_at is None:
            fired_at = n
    f1 = not watch.escaped
    f2 = watch.sup <= watch.limit
    f3, f4, masses, _ = _terminal_checks(st.infected, y0, x, config, prm, u_grid)
    nk, _ = sir.event_N_kappa(st, config.kappa(d), lat)
    return GoodEventResult(f1, f2, f3, f4, nk, T if fired_at is None else fired_at, watch.sup, masses)


# ------------------------------------------------------ oriented percolation


@dataclass
class PercolationResult:
    percolates: bool
    max_level: int
    cluster_size: int


def oriented_field(q: float, M: int, N: int, rng: np.random.Generator | None = None, uniforms=None) -> np.ndarray:
    """Open/closed states on {x1 + x2 <= N} as an (N+1, N+1) boolean array.

    M = 0 gives independent sites.  For M > 0, sites in the same square
    block of side M//2 + 1 share one uniform, so states at l1 distance
    greater than M are independent and every site is open with probability q.
    """
    if not 0 <= q <= 1:
        raise ValueError("density must lie in [0, 1]")
    if M < 0:
        raise ValueError("dependence range must be nonnegative")
    s = M // 2 + 1
    nb = N // s + 1
    if uniforms is None:
        uniforms = rng.random((nb, nb))
    idx = np.arange(N + 1) // s
    return uniforms[idx[:, None], idx[None, :]] < q


def percolate(open_: np.ndarray, N: int) -> PercolationResult:
    """Oriented percolation from the origin along offspring steps up to level N."""
    if not open_[0, 0]:
        return PercolationResult(False, -1, 0)
    wet = np.zeros(1, dtype=bool)
    wet[0] = True
    size = 1
    for s in range(1, N + 1):
        x1 = np.arange(s + 1)
        prev = np.zeros(s + 1, dtype=bool)
        prev[:s] |= wet  # from (x1, x2 - 1)
        prev[1:] |= wet  # from (x1 - 1, x2)
        nxt = prev & open_[x1, s - x1]
        if not nxt.any():
            return PercolationResult(False, s - 1, size)
        size += int(nxt.sum())
        wet = nxt
    return PercolationResult(True, N, size)


def oriented_percolation(q: float, M: int, N: int, rng: np.random.Generator, uniforms=None) -> PercolationResult:
    return percolate(oriented_field(q, M, N, rng, uniforms), N)


def comparison_field(omega: set, eps0: float, budget: int, rng: np.random.Generator) -> dict:
    """xi(x): for occupied x, 1 iff both offspring are occupied; for vacant x, Bernoulli(1 - 14 eps0)."""
    out = {}
    for i in range(1, gamma_index((0, budget)) + budget + 1):
        x = gamma_order(i)
        if x[0] + x[1] > budget:
            break
        if x in omega:
            out[x] = all(z in omega for z in offspring(x))
        else:
            out[x] = bool(rng.random() < 1 - 14 * eps0)
    return out


# ---------------------------------------------------------- block iteration


def _order_key(sites: np.ndarray) -> np.ndarray:
    """Rank of each coordinate in 0, 1, -1, 2, -2, ...; rows compare lexicographically."""
    return np.where(sites > 0, 2 * sites - 1, -2 * sites)


def select_per_cube(hat_sites: np.ndarray, x: GridSite, count: int, prm: RunParams, cubes=None) -> dict:
    """For each offspring cube of x, its first ``count`` thinned sites in the fixed order."""
    key = _order_key(hat_sites)
    order = np.lexsort(key.T[::-1]) if len(hat_sites) else np.zeros(0, np.int64)
    ordered = hat_sites[order]
    out = {}
    for z in (offspring(x) if cubes is None else cubes):
        inside = box_contains_many(cube(z, prm), ordered, prm.lattice) if len(ordered) else np.zeros(0, bool)
        out[z] = ordered[inside][:count]
    return out


@dataclass
class BlockStep:
    site: GridSite
    case: str  # "first", "I" or "II"
    tau: int
    good: bool
    mu_size: int
    nu_size: int
    events: dict | None = None


@dataclass
class BlockResult:
    omega: list[GridSite]
    steps: list[BlockStep]
    taus: list[int]
    mus: list[np.ndarray]
    nus: list[np.ndarray]
    max_recovered_count: int
    kappa_R: float
    exhausted: bool

    def to_json(self) -> str:
        return json.dumps({
            "omega": [list(x) for x in self.omega],
            "steps": [{"site": list(s.site), "case": s.case, "tau": s.tau, "good": s.good,
                       "mu": s.mu_size, "nu": s.nu_size} for s in self.steps],
            "max_recovered_count": self.max_recovered_count, "kappa_R": self.kappa_R,
            "exhausted": self.exhausted}, sort_keys=True)


class BudgetExhausted(RuntimeError):
    pass


def block_iteration(config: BlockConfig, oracle: sir.EdgeOracle, rng: np.random.Generator, budget: int = 12,
                    eta0=None, strict: bool = False, u_grid=None) -> BlockResult:
    """Visit grid sites in order up to l1 norm ``budget`` and grow the occupied set.

    Each visited site whose cube received a restart set runs one epidemic
    segment until the stopping rule or T_theta^R; it is occupied when the
    segment's good event holds.  The restart sets mu and the carried sets
    nu follow the w-bookkeeping of the construction; the returned schedule
    (taus, mus, nus) drives ``sir.run_with_immigration`` to the same path.
    """
    lat = oracle.lattice
    d = lat.d
    prm = config.params(lat)
    T = prm.T_theta_R
    kR = config.kappa(d) * lat.R
    if eta0 is None:
        eta0 = build_eta0(config, lat, rng)
    mu = sir._keyset(eta0, d)
    n0 = mu.size
    if n0 == 0:
        # an empty restart would satisfy the size clause vacuously
        raise ValueError("the initial infected set must be nonempty")
    nu = np.zeros(0, np.int64)
    w = np.zeros(0, np.int64)
    at = sir.EpidemicState(mu, np.zeros(0, np.int64), d, 0)
    t = 0
    omega: list[GridSite] = []
    occ = set()
    steps, taus, mus, nus = [], [0], [mu], [nu]
    max_rec = 0
    n_sites = gamma_index((budget, 0))
    for i in range(1, n_sites + 1):
        y = gamma_order(i)
        if i == 1:
            case = "first"
        else:
            parents = [u for u in occ if y in offspring(u)]
            case = "I" if parents else "II"
            if case == "I":
                inside = box_contains_many(cube(y, prm), decode(w, d), lat) if w.size else np.zeros(0, bool)
                mu_new, nu_new = w[inside], w[~inside]
            else:
                mu_new, nu_new = np.zeros(0, np.int64), w
            allowed = np.union1d(at.infected, nu)
            if not (np.all(np.isin(mu_new, allowed)) and np.all(np.isin(nu_new, allowed))):
                raise AssertionError("restart sets leave the infected set and carried immigrants")
            mu, nu = np.sort(mu_new), np.sort(nu_new)
            taus.append(t)
            mus.append(mu)
            nus.append(nu)
            if case == "II":
                steps.append(BlockStep(y, case, t, False, 0, nu.size))
                continue
        # one segment from (mu, current recovered set)
        seg = sir.EpidemicState(np.setdiff1d(mu, at.recovered), at.recovered, d, 0)
        watch = _SegmentWatch(y, config, prm)
        fired = watch.add(mu)
        cur = seg
        while not fired and cur.n < T:
            cur = sir.sir_step(cur, oracle)
            fired = watch.add(cur.infected)
        t += cur.n
        at = sir.EpidemicState(cur.infected, cur.recovered, d, t)
        sup_rec = sir.sup_neighborhood(at.recovered, lat)
        max_rec = max(max_rec, sup_rec)
        if sup_rec > kR:
            raise AssertionError(f"recovered neighbourhood count {sup_rec} exceeds kappa R = {kR}")
        good = False
        ev = None
        if not fired and cur.n == T:
            f3, f4, masses, hat = _terminal_checks(cur.infected, mu.size, y, config, prm, u_grid)
            good = f3 and f4
            ev = {"F3": f3, "F4": f4, "thinned": {str(k): v for k, v in masses.items()}}
        keep = nu if case != "first" else np.zeros(0, np.int64)
        if good:
            occ.add(y)
            omega.append(y)
            fresh = [z for z in offspring(y) if not any(z in offspring(u) for u in occ if precedes(u, y))]
            picks = select_per_cube(hat.sites, y, n0, prm, fresh)
            parts = [encode(s, d) for s in picks.values() if len(s)]
            w = np.unique(np.concatenate([keep] + parts)) if parts else keep
        else:
            w = keep
        steps.append(BlockStep(y, case, t, good, mu.size, nu.size, ev))
    exhausted = any(z[0] + z[1] > budget for u in occ for z in offspring(u))
    if exhausted and strict:
        raise BudgetExhausted(f"occupied sites reach beyond l1 norm {budget}")
    return BlockResult(omega, steps, taus, mus, nus, max_rec, kR, exhausted)


def replay_schedule(result: BlockResult) -> list:
    """The block run's restarts as events for ``sir.run_with_immigration``.

    Segment ends are given as absolute times; the rule returns the recorded
    (mu, nu) for that event.
    """
    events = []
    for tau, mu, nu in zip(result.taus[1:], result.mus[1:], result.nus[1:]):
        events.append(sir.ImmigrationEvent(tau, (lambda m, n: (lambda at, prev: (m, n)))(mu, nu)))
    return events
