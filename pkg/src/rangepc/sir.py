"""SIR epidemic on the range-R lattice and its couplings.

Site sets are sorted unique int64 key arrays (see ``lattice.encode``).
Edge randomness is a keyed hash of the canonical edge, so any number of
processes can share one environment without storing it.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .lattice import BoxSpec, LatticeParams, SparseCounts, as_sites, decode, encode, neighborhood_sup_count
from .randwalk import RunParams

_CHUNK = 1 << 22  # neighbour pairs materialized at once


def _keyset(sites, d: int) -> np.ndarray:
    if isinstance(sites, np.ndarray) and sites.ndim == 1 and sites.dtype == np.int64:
        return np.unique(sites)
    arr = as_sites(sites, d) if len(sites) else np.zeros((0, d), np.int64)
    return np.unique(encode(arr, d))


def _member(sorted_keys: np.ndarray, q: np.ndarray) -> np.ndarray:
    if sorted_keys.size == 0:
        return np.zeros(q.shape, dtype=bool)
    i = np.searchsorted(sorted_keys, q)
    i[i == sorted_keys.size] = 0
    return sorted_keys[i] == q


def _union(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.union1d(a, b).astype(np.int64)


def _seed64(seed: int) -> np.uint64:
    return np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)


@dataclass(frozen=True)
class EdgeOracle:
    """Shared bond environment: edge {x, y} is open iff hash(seed, x, y) < p."""

    seed: int
    p: float
    lattice: LatticeParams

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ValueError(f"edge probability {self.p} outside [0, 1]")

    def uniforms(self, a_keys, b_keys) -> np.ndarray:
        a = np.ascontiguousarray(a_keys, dtype=np.int64)
        b = np.ascontiguousarray(b_keys, dtype=np.int64)
        return _kernels.edge_uniforms(_seed64(self.seed), a, b)

    def is_open(self, a: Sequence[int], b: Sequence[int]) -> bool:
        d = self.lattice.d
        diff = max(abs(int(x) - int(y)) for x, y in zip(a, b))
        if not 0 < diff <= self.lattice.R:
            raise ValueError("not an edge")
        ka, kb = encode([a, b], d)
        return bool(self.uniforms([ka], [kb])[0] < self.p)


@dataclass
class EpidemicState:
    infected: np.ndarray  # sorted keys
    recovered: np.ndarray  # sorted keys
    d: int
    n: int = 0

    def __post_init__(self):
        self.infected = np.asarray(self.infected, dtype=np.int64)
        self.recovered = np.asarray(self.recovered, dtype=np.int64)
        if np.intersect1d(self.infected, self.recovered).size:
            raise ValueError("a site cannot be both infected and recovered")

    @classmethod
    def from_sites(cls, infected, recovered=(), d: int = 2, n: int = 0) -> "EpidemicState":
        return cls(_keyset(infected, d), _keyset(recovered, d), d, n)

    @property
    def infected_sites(self) -> np.ndarray:
        return decode(self.infected, self.d)

    @property
    def recovered_sites(self) -> np.ndarray:
        return decode(self.recovered, self.d)

    def same_as(self, other: "EpidemicState") -> bool:
        return (self.n == other.n and np.array_equal(self.infected, other.infected)
                and np.array_equal(self.recovered, other.recovered))


@dataclass
class StepRecord:
    """Infection attempts of one step: target keys and how many open edges hit each."""

    targets: np.ndarray
    attempts: np.ndarray
    d: int


def _attempts(sources: np.ndarray, blocked: np.ndarray, oracle: EdgeOracle):
    """Open edges from ``sources`` to sites outside ``blocked``; returns target keys (with repeats)."""
    off = oracle.lattice.offset_keys
    V = off.shape[0]
    out = []
    step = max(1, _CHUNK // V)
    for s in range(0, sources.size, step):
        src = sources[s : s + step]
        x = np.repeat(src, V)
        y = (src[:, None] + off[None, :]).reshape(-1)
        ok = ~_member(blocked, y)
        x, y = x[ok], y[ok]
        if y.size:
            u = oracle.uniforms(x, y)
            out.append(y[u < oracle.p])
    return np.concatenate(out) if out else np.zeros(0, np.int64)


def sir_step(state: EpidemicState, oracle: EdgeOracle, record: bool = False):
    """One generation; with ``record`` also returns the attempt multiplicities."""
    blocked = _union(state.infected, state.recovered)
    hits = _attempts(state.infected, blocked, oracle)
    targets, k = np.unique(hits, return_counts=True)
    nxt = EpidemicState(targets, _union(state.recovered, state.infected), state.d, state.n + 1)
    if record:
        return nxt, StepRecord(targets, k, state.d)
    return nxt


def count_collisions(rec: StepRecord) -> tuple[dict, int]:
    """Gamma(x) = C(k_x, 2) for k_x simultaneous attempts on susceptible x."""
    gamma = rec.attempts * (rec.attempts - 1) // 2
    sites = decode(rec.targets, rec.d)
    per = {tuple(int(v) for v in s): int(g) for s, g in zip(sites, gamma) if g}
    return per, int(gamma.sum())


# ---------------------------------------------------------------- stopping


@dataclass
class StopRule:
    """Stopping conditions checked after every generation (and at time 0).

    ``escape_box``: fire when the cumulative infected support leaves the box.
    ``chi``: fire when some N(y) has held more than chi*R infected sites in total.
    """

    max_generation: int | None = None
    population: int | None = None
    escape_box: BoxSpec | None = None
    chi: float | None = None
    window: BoxSpec | None = None

    def check(self, states: list[EpidemicState], cumulative: np.ndarray, lattice: LatticeParams) -> str | None:
        st = states[-1]
        if self.max_generation is not None and st.n >= self.max_generation:
            return "max-generation"
        if self.population is not None and st.infected.size >= self.population:
            return "population"
        if self.escape_box is not None and st.infected.size:
            from .lattice import box_contains_many

            if not np.all(box_contains_many(self.escape_box, decode(st.infected, st.d), lattice)):
                return "escape"
        if self.chi is not None and cumulative.size:
            sup = sup_neighborhood(cumulative, lattice, self.window)
            if sup > self.chi * lattice.R:
                return "neighborhood"
        return None


@dataclass
class Verdict:
    kind: str  # "extinct" | "horizon" | "rule"
    generation: int
    rule: str | None = None

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "generation": self.generation, "rule": self.rule}, sort_keys=True)


def sup_neighborhood(keys: np.ndarray, lattice: LatticeParams, window: BoxSpec | None = None) -> int:
    """max_x |A ∩ N(x)| for the key set A, over ``window`` or all of the lattice."""
    if keys.size == 0:
        return 0
    pts = SparseCounts(decode(keys, lattice.d), np.ones(keys.size, np.int64), lattice.d)
    if window is None:
        lo, hi = pts.sites.min(axis=0), pts.sites.max(axis=0)
        R = lattice.R
        centre = (lo + hi) / 2 / R
        window = BoxSpec(tuple(centre), float((hi - lo).max() / 2 / R + 1.0 + 1.0 / R))
    return neighborhood_sup_count(pts, lattice, window)


def run_sir(eta0, rho0, oracle: EdgeOracle, horizon: int, stop: StopRule | None = None):
    """Iterate sir_step; returns (states, verdict)."""
    d = oracle.lattice.d
    st = eta0 if isinstance(eta0, EpidemicState) else EpidemicState.from_sites(eta0, rho0, d)
    states = [st]
    base = st.recovered
    cumulative = st.infected
    if stop is not None:
        fired = stop.check(states, cumulative, oracle.lattice)
        if fired:
            return states, Verdict("rule", st.n, fired)
    while st.n < horizon:
        if st.infected.size == 0:
            return states, Verdict("extinct", st.n)
        st = sir_step(st, oracle)
        states.append(st)
        if st.infected.size == 0:
            return states, Verdict("extinct", st.n)
        if stop is not None:
            cumulative = np.setdiff1d(_union(st.recovered, st.infected), base)
            fired = stop.check(states, cumulative, oracle.lattice)
            if fired:
                return states, Verdict("rule", st.n, fired)
    return states, Verdict("horizon", st.n)


def cumulative_infected(states: list[EpidemicState], upto: int | None = None) -> np.ndarray:
    """Union of the infected sets of states[0..upto]."""
    upto = len(states) - 1 if upto is None else upto
    parts = [s.infected for s in states[: upto + 1]]
    return np.unique(np.concatenate(parts)) if parts else np.zeros(0, np.int64)


# ---------------------------------------------------------------- couplings


@dataclass
class CoupledStep:
    infected: np.ndarray  # SIR infected keys
    recovered: np.ndarray
    modified: SparseCounts  # modified-SIR counts
    brw: SparseCounts  # branching random walk counts
    collisions: StepRecord | None = None


@dataclass
class CoupledRun:
    steps: list[CoupledStep]
    params: RunParams

    def epidemic_states(self) -> list[EpidemicState]:
        d = self.params.d
        return [EpidemicState(s.infected, s.recovered, d, n) for n, s in enumerate(self.steps)]

    def brw_trajectory(self):
        from .brw import Population, Trajectory

        return Trajectory([Population(s.brw, n) for n, s in enumerate(self.steps)], self.params)

    def modified_counts(self) -> list[SparseCounts]:
        return [s.modified for s in self.steps]


def _counts_from_keys(keys: np.ndarray, d: int) -> SparseCounts:
    if keys.size == 0:
        return SparseCounts.empty(d)
    u, c = np.unique(keys, return_counts=True)
    return SparseCounts(decode(u, d), c, d)


def _order(keys: np.ndarray, marked: np.ndarray):
    # marked particles first within each site
    o = np.lexsort((~marked, keys))
    return keys[o], marked[o]


def coupled_triple(eta0, rho0, Z0, params: RunParams, rng: np.random.Generator, horizon: int,
                   freeze_recovered: bool = False) -> CoupledRun:
    """Joint realization of SIR, modified SIR and branching random walk.

    Every BRW particle draws Binomial(V, p) births on distinct neighbours.
    Modified-SIR particles form a marked subfamily: a marked particle's
    children are marked unless they land on a recovered site of the SIR.
    Each SIR-infected site designates its first resident particle (marked
    particles come first, so it is marked) and the SIR infections are that
    particle's children on susceptible sites.  The SIR then has its usual
    law because every edge it uses is examined at most once.
    ``freeze_recovered`` makes the modified process avoid rho0 only.
    """
    d, V = params.d, params.V
    off = params.lattice.offset_keys
    eta = _keyset(eta0, d)
    rho = _keyset(rho0, d)
    rho_init = rho
    if np.intersect1d(eta, rho).size:
        raise ValueError("initial infected and recovered sets overlap")
    if isinstance(Z0, SparseCounts):
        zk = np.repeat(encode(Z0.sites, d), Z0.counts)
    elif Z0 is None:
        zk = eta.copy()
    else:
        zk = np.sort(encode(as_sites(Z0, d), d))
    zc = _counts_from_keys(zk, d)
    if not np.all(_member(np.unique(zk), eta)):
        raise ValueError("Z0 must dominate eta0")
    # mark one particle per infected site as the modified process
    marked = np.zeros(zk.size, dtype=bool)
    first = np.searchsorted(zk, eta)
    marked[first] = True
    keys, marked = _order(zk, marked)
    steps = [CoupledStep(eta, rho, _counts_from_keys(keys[marked], d), zc)]
    for _ in range(horizon):
        counts, dirs = _kernels.draw_births(keys.size, V, params.p, rng)
        parent = np.repeat(np.arange(keys.size), counts)
        child = keys[parent] + off[dirs]
        avoid = rho_init if freeze_recovered else rho
        cmark = marked[parent] & ~_member(avoid, child)
        # SIR infections from designated particles
        desig = np.searchsorted(keys, eta)
        if desig.size and not np.all(marked[desig]):
            raise AssertionError("designated particle is not in the modified process")
        is_desig = np.zeros(keys.size, dtype=bool)
        is_desig[desig] = True
        blocked = _union(eta, rho)
        sel = is_desig[parent] & ~_member(blocked, child)
        hits = child[sel]
        targets, k = np.unique(hits, return_counts=True)
        rho = _union(rho, eta)
        eta = targets
        keys, marked = _order(child, cmark)
        if eta.size:
            at = np.searchsorted(keys, eta)
            if not np.all(marked[at]):
                raise AssertionError("domination violated")
        steps.append(CoupledStep(eta, rho, _counts_from_keys(keys[marked], d),
                                 _counts_from_keys(keys, d), StepRecord(targets, k, d)))
    return CoupledRun(steps, params)


def coupled_run(eta0, rho0, Z0, params: RunParams, rng: np.random.Generator, horizon: int):
    """SIR together with a dominating BRW: returns (epidemic states, Trajectory)."""
    run = coupled_triple(eta0, rho0, Z0, params, rng, horizon)
    return run.epidemic_states(), run.brw_trajectory()


def run_modified_sir(eta0, rho0, params: RunParams, rng: np.random.Generator, horizon: int,
                     freeze_recovered: bool = False) -> list[SparseCounts]:
    """Modified SIR counts per generation (multiple occupancy allowed)."""
    return coupled_triple(eta0, rho0, None, params, rng, horizon, freeze_recovered).modified_counts()


# ---------------------------------------------------------------- immigration


@dataclass
class ImmigrationEvent:
    """One restart.

    ``time`` is an absolute generation or a callable on the segment's states
    (segment time 0 first) that returns True when the segment should stop.
    ``rule(state, nu_prev)`` gets the epidemic state at the event time and
    the previous immigrant set, and returns key arrays (mu, nu).
    ``freeze`` holds the epidemic at its current state from this event on.
    """

    time: int | Callable[[list[EpidemicState]], bool]
    rule: Callable | None = None
    freeze: bool = False


@dataclass
class ImmigrationSchedule:
    mu0: np.ndarray
    nu0: np.ndarray
    events: list[ImmigrationEvent] = field(default_factory=list)


@dataclass
class ImmigrationRun:
    states: list[EpidemicState]
    taus: list[int]
    mus: list[np.ndarray]
    nus: list[np.ndarray]
    frozen_at: int | None = None


def run_with_immigration(schedule: ImmigrationSchedule, rho0, oracle: EdgeOracle, horizon: int) -> ImmigrationRun:
    """Epidemic restarted at event times from chosen subsets.

    Between consecutive event times the process is an ordinary SIR started
    from (mu_i, recovered set at tau_i); the sites of the infected set at
    tau_i that are not kept in mu_i are forgotten.  Recovered sites inside
    mu_i have no open edges left and infect nobody.
    """
    d = oracle.lattice.d
    mu = _keyset(schedule.mu0, d)
    nu = _keyset(schedule.nu0, d)
    rho = _keyset(rho0, d)
    start = EpidemicState(mu, rho, d, 0)
    states = [start]
    taus, mus, nus = [0], [mu], [nu]
    frozen = None
    t0 = 0
    seg = [start]
    events = schedule.events
    for i in range(len(events) + 1):
        event = events[i] if i < len(events) else None
        trigger = event.time if event is not None and callable(event.time) else None
        end = horizon
        if event is not None and trigger is None:
            if int(event.time) < t0:
                raise ValueError(f"event times must be nondecreasing ({event.time} < {t0})")
            end = min(int(event.time), horizon)
        cur = seg[-1]
        fired = False
        while True:
            if trigger is not None and trigger(seg):
                fired = True
                break
            if t0 + cur.n >= end:
                break
            cur = sir_step(cur, oracle)
            seg.append(cur)
            states.append(EpidemicState(cur.infected, cur.recovered, d, t0 + cur.n))
        tau = t0 + cur.n
        if event is None or (trigger is not None and not fired) or (trigger is None and int(event.time) > horizon):
            break
        at = states[-1]
        taus.append(tau)
        if event.freeze:
            frozen = tau
            while states[-1].n < horizon:
                states.append(EpidemicState(at.infected, at.recovered, d, states[-1].n + 1))
            break
        mu_new, nu_new = event.rule(at, nu)
        mu_new, nu_new = _keyset(mu_new, d), _keyset(nu_new, d)
        allowed = _union(at.infected, nu)
        if not (np.all(_member(allowed, mu_new)) and np.all(_member(allowed, nu_new))):
            raise ValueError("immigration rule chose sites outside the infected set and previous immigrants")
        mus.append(mu_new)
        nus.append(nu_new)
        nu = nu_new
        seg = [EpidemicState(np.setdiff1d(mu_new, at.recovered), at.recovered, d, 0)]
        t0 = tau
    return ImmigrationRun(states, taus, mus, nus, frozen)


# ---------------------------------------------------------------- events and dumps


def event_N_kappa(state: EpidemicState, kappa: float, params, window: BoxSpec | None = None) -> tuple[bool, int]:
    """Whether sup_x |rho ∩ N(x)| <= kappa R, with the achieved sup."""
    lattice = params.lattice if isinstance(params, RunParams) else params
    sup = sup_neighborhood(state.recovered, lattice, window)
    return sup <= kappa * lattice.R, sup


def dump_states_csv(states: list[EpidemicState], path):
    d = states[0].d if states else 2
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation"] + [f"k_{i + 1}" for i in range(d)] + ["status"])
        for st in states:
            for s in st.infected_sites:
                w.writerow([st.n] + [int(v) for v in s] + ["I"])
            for s in st.recovered_sites:
                w.writerow([st.n] + [int(v) for v in s] + ["R"])
