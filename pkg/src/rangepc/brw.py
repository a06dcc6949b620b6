"""Branching random walk that dominates the epidemic.

Every particle at x is replaced by Binomial(V, p) children placed on
distinct uniformly chosen neighbours of x.  Populations are site-count
measures; particles are only enumerated transiently, in site-key order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .lattice import SparseCounts, encode, unit_box_of
from .randwalk import ConstantFunction, GridFunction, RunParams, neighbor_average, neighbor_mean


@dataclass
class Population:
    counts: SparseCounts
    generation: int = 0

    @classmethod
    def from_sites(cls, sites, d: int, generation: int = 0, weights=None) -> "Population":
        return cls(SparseCounts.from_sites(sites, d, weights), generation)

    @classmethod
    def from_mapping(cls, mapping, d: int, generation: int = 0) -> "Population":
        return cls(SparseCounts.from_mapping(mapping, d), generation)

    @property
    def d(self) -> int:
        return self.counts.d

    @property
    def sites(self) -> np.ndarray:
        return self.counts.sites

    @property
    def mass(self) -> int:
        return self.counts.mass

    def particles(self) -> np.ndarray:
        """One row per particle, grouped by site in key order."""
        return np.repeat(self.counts.sites, self.counts.counts, axis=0)

    def to_dict(self):
        return self.counts.to_dict()


@dataclass
class BirthLog:
    """Births of one generation: parent particle index and direction index."""

    particles: np.ndarray  # (n_particles, d) parent positions
    parent: np.ndarray  # (n_births,) index into particles
    direction: np.ndarray  # (n_births,) index into lattice offsets


@dataclass
class Trajectory:
    populations: list[Population]
    params: RunParams
    seed: int | None = None
    births: list[BirthLog] | None = None

    @property
    def N(self) -> int:
        return len(self.populations) - 1

    def __getitem__(self, n: int) -> Population:
        return self.populations[n]


def _step_with_log(pop: Population, params: RunParams, rng: np.random.Generator):
    d = params.d
    parts = pop.particles()
    counts, direction = _kernels.draw_births(parts.shape[0], params.V, params.p, rng)
    parent = np.repeat(np.arange(parts.shape[0]), counts)
    children = parts[parent] + params.lattice.offsets[direction] if parent.size else np.zeros((0, d), np.int64)
    nxt = Population(SparseCounts.from_sites(children, d), pop.generation + 1)
    return nxt, BirthLog(parts, parent, direction)


def brw_step(pop: Population, params: RunParams, rng: np.random.Generator) -> Population:
    return _step_with_log(pop, params, rng)[0]


def simulate(pop0: Population, params: RunParams, N: int, rng: np.random.Generator,
             log_births: bool = False, seed: int | None = None) -> Trajectory:
    pops = [pop0]
    logs = [] if log_births else None
    pop = pop0
    for _ in range(N):
        pop, log = _step_with_log(pop, params, rng)
        pops.append(pop)
        if log_births:
            logs.append(log)
    return Trajectory(pops, params, seed, logs)


def measure_apply(pop: Population, phi) -> float:
    """Z(phi) = sum_x Z(x) phi(x); phi maps an (n, d) site array to values."""
    if pop.mass == 0:
        return 0.0
    vals = np.asarray(phi(pop.sites), dtype=np.float64)
    return math.fsum(pop.counts.counts * vals)


def barred(phi, params: RunParams):
    """phi-bar(y) = (1/V) sum_e phi(y + e) as a site function.

    Dense tables that vanish outside their box are averaged once on the
    grid; anything else is averaged over the V neighbours on demand.
    """
    if isinstance(phi, ConstantFunction):
        return phi
    if isinstance(phi, GridFunction) and phi.outside == "zero":
        R = params.R
        return GridFunction(neighbor_mean(phi.values, R, params.V), phi.origin - R, "zero")

    def f(sites):
        return neighbor_average(phi, sites, params.lattice)

    return f


def squared(phi):
    if isinstance(phi, ConstantFunction):
        return ConstantFunction(phi.c**2)
    if isinstance(phi, GridFunction):
        return GridFunction(phi.values**2, phi.origin, phi.outside)

    def f(sites):
        return np.asarray(phi(sites), dtype=np.float64) ** 2

    return f


def martingale_increments(traj: Trajectory, phi, N: int | None = None) -> list[float]:
    """M_{n+1} - M_n = Z_{n+1}(phi) - (1 + theta/R^{d-1}) Z_n(phi-bar), n < N."""
    N = traj.N if N is None else N
    if N > traj.N:
        raise ValueError(f"trajectory has only {traj.N} steps")
    growth = 1.0 + traj.params.drift
    bar = barred(phi, traj.params)
    out = []
    for n in range(N):
        z = traj.populations[n]
        drift = measure_apply(z, bar)
        out.append(measure_apply(traj.populations[n + 1], phi) - growth * drift)
    return out


def martingale_term(traj: Trajectory, phi, N: int | None = None) -> float:
    return math.fsum(martingale_increments(traj, phi, N))


def quadratic_variation(traj: Trajectory, phi, N: int | None = None) -> float:
    """p(1-p) V sum_{n<N} Z_n(phi^2-bar)."""
    N = traj.N if N is None else N
    if N > traj.N:
        raise ValueError(f"trajectory has only {traj.N} steps")
    prm = traj.params
    bar = barred(squared(phi), prm)
    terms = [measure_apply(traj.populations[n], bar) for n in range(N)]
    return prm.p * (1 - prm.p) * prm.V * math.fsum(terms)


def gw_stats(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Per-generation mass and the mean curve (1 + theta/R^{d-1})^n mass_0."""
    mass = np.array([z.mass for z in traj.populations], dtype=np.int64)
    growth = 1.0 + traj.params.drift
    mean = mass[0] * growth ** np.arange(len(mass))
    return mass, mean


def gw_variance(params: RunParams, n: int, mass0: int = 1) -> float:
    """Variance of the generation-n mass of the Binomial(V, p) Galton-Watson process."""
    m = params.p * params.V
    s2 = params.V * params.p * (1 - params.p)
    if n == 0:
        return 0.0
    if abs(m - 1) < 1e-15:
        return mass0 * n * s2
    return mass0 * s2 * m ** (n - 1) * (m**n - 1) / (m - 1)


def rescaled_measure(pop: Population, params: RunParams, t: float | None = None):
    """Atoms x / sqrt(R^{d-1}/3) with weight 1/R^{d-1} per particle.

    ``t`` labels the macroscopic time and does not change the atoms.
    """
    scale = params.R ** (params.d - 1)
    if pop.mass == 0:
        return []
    pos = pop.sites / params.R / math.sqrt(scale / 3.0)
    w = pop.counts.counts / scale
    return [(pos[i], float(w[i])) for i in range(len(w))]


def thin(pop: Population, K: float, params: RunParams) -> Population:
    """Zero every unit box Q(y) whose particle count exceeds K * beta_d(R)."""
    if K <= 0:
        raise ValueError("K must be positive")
    if pop.mass == 0:
        return pop
    thr = K * params.beta_d
    boxes = unit_box_of(pop.sites, params.R)
    bkeys = encode(boxes, params.d)
    uniq, inv = np.unique(bkeys, return_inverse=True)
    box_mass = np.bincount(inv, weights=pop.counts.counts, minlength=len(uniq))
    keep = box_mass[inv] <= thr
    return Population(SparseCounts(pop.sites[keep], pop.counts.counts[keep], pop.d), pop.generation)


def dump_trajectory_csv(traj: Trajectory, path):
    d = traj.params.d
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation"] + [f"k_{i + 1}" for i in range(d)] + ["count"])
        for z in traj.populations:
            for s, c in zip(z.sites, z.counts.counts):
                w.writerow([z.generation] + [int(v) for v in s] + [int(c)])
