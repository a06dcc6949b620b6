"""Geometry of the fine lattice Z^d / R in integer scaled coordinates.

A site x = k/R is stored as its integer vector k.  Two sites are neighbours
when their scaled coordinates differ by at most R in sup-norm (and are not
equal), so every site has V(R) = (2R+1)^d - 1 neighbours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

Site = tuple[int, ...]

# Site keys pack each coordinate into 21 bits (biased), big-endian, so the
# integer order of keys is the lexicographic order of sites.
KEY_BITS = 21
KEY_BIAS = 1 << (KEY_BITS - 1)
KEY_MASK = (1 << KEY_BITS) - 1
COORD_LIMIT = KEY_BIAS - 1


@dataclass(frozen=True)
class LatticeParams:
    d: int
    R: int

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.d}")
        if int(self.R) != self.R or self.R < 1:
            raise ValueError(f"range R must be a positive integer, got {self.R}")

    @property
    def volume(self) -> int:
        return (2 * self.R + 1) ** self.d - 1

    @cached_property
    def offsets(self) -> np.ndarray:
        """All V(R) neighbour displacements, lexicographically ordered."""
        r = np.arange(-self.R, self.R + 1, dtype=np.int64)
        grid = np.stack(np.meshgrid(*([r] * self.d), indexing="ij"), axis=-1)
        grid = grid.reshape(-1, self.d)
        keep = np.any(grid != 0, axis=1)
        out = np.ascontiguousarray(grid[keep])
        out.setflags(write=False)
        return out

    @cached_property
    def offset_keys(self) -> np.ndarray:
        """Key-space increments matching ``offsets`` (keys are linear in k)."""
        weights = np.array(
            [1 << (KEY_BITS * (self.d - 1 - i)) for i in range(self.d)], dtype=np.int64
        )
        out = self.offsets @ weights
        out.setflags(write=False)
        return out


def volume(params: LatticeParams) -> int:
    """Number of neighbours V(R) = (2R+1)^d - 1."""
    return params.volume


def as_sites(sites, d: int | None = None) -> np.ndarray:
    """Coerce a site or a sequence of sites to an (n, d) int64 array."""
    arr = np.asarray(sites, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, d or 0)
    if d is not None and arr.shape[1] != d:
        raise ValueError(f"expected {d}-dimensional sites, got shape {arr.shape}")
    return arr


def encode(sites, d: int | None = None) -> np.ndarray:
    """Pack (n, d) integer sites into sortable int64 keys."""
    arr = as_sites(sites, d)
    if arr.size and np.abs(arr).max() > COORD_LIMIT:
        raise OverflowError(f"site coordinate exceeds +/-{COORD_LIMIT}")
    keys = np.zeros(arr.shape[0], dtype=np.int64)
    for i in range(arr.shape[1]):
        keys = (keys << KEY_BITS) | (arr[:, i] + KEY_BIAS)
    return keys


def decode(keys, d: int) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64).reshape(-1)
    out = np.empty((keys.shape[0], d), dtype=np.int64)
    for i in range(d - 1, -1, -1):
        out[:, i] = (keys & KEY_MASK) - KEY_BIAS
        keys = keys >> KEY_BITS
    return out


def sup_norm(v) -> int:
    return int(np.max(np.abs(np.asarray(v, dtype=np.int64)))) if len(v) else 0


def is_neighbor(a: Sequence[int], b: Sequence[int], params: LatticeParams) -> bool:
    if len(a) != len(b) or len(a) != params.d:
        raise ValueError("dimension mismatch")
    dist = max(abs(int(x) - int(y)) for x, y in zip(a, b))
    return 0 < dist <= params.R


def canonical_edge(a: Sequence[int], b: Sequence[int], params: LatticeParams) -> tuple[Site, Site]:
    """Edge identity with the lexicographically smaller endpoint first."""
    if not is_neighbor(a, b, params):
        raise ValueError(f"{tuple(a)} and {tuple(b)} are not neighbours")
    a, b = tuple(int(x) for x in a), tuple(int(x) for x in b)
    return (a, b) if a < b else (b, a)


def neighbors(a: Sequence[int], params: LatticeParams) -> np.ndarray:
    """The V(R) neighbours of ``a`` as an (V, d) array."""
    return np.asarray(a, dtype=np.int64) + params.offsets


def sample_distinct_neighbors(
    a: Sequence[int], m: int, params: LatticeParams, rng: np.random.Generator
) -> np.ndarray:
    """Uniformly random m-subset of N(a), as an (m, d) array."""
    V = params.volume
    if m < 0 or m > V:
        raise ValueError(f"cannot draw {m} distinct neighbours out of {V}")
    idx = rng.choice(V, size=m, replace=False)
    return np.asarray(a, dtype=np.int64) + params.offsets[idx]


@dataclass(frozen=True)
class BoxSpec:
    """Closed sup-norm box Q_M(center) in unscaled (real) coordinates."""

    center: tuple[float, ...]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"box radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def axis_range(self, axis: int, R: int) -> tuple[int, int]:
        """Inclusive range of scaled coordinates k with |k/R - c| <= M."""
        c, M = self.center[axis], self.radius
        lo = math.ceil((c - M) * R) - 1
        hi = math.floor((c + M) * R) + 1
        # float rounding can move the estimate by one either way; settle on
        # the exact double-precision predicate used by box_contains.
        while abs(lo / R - c) > M and lo <= hi:
            lo += 1
        while lo - 1 >= -COORD_LIMIT and abs((lo - 1) / R - c) <= M:
            lo -= 1
        while abs(hi / R - c) > M and hi >= lo:
            hi -= 1
        while abs((hi + 1) / R - c) <= M:
            hi += 1
        return lo, hi


def box_contains(box: BoxSpec, a: Sequence[int], params: LatticeParams) -> bool:
    R = params.R
    if len(a) != len(box.center):
        raise ValueError("dimension mismatch")
    return all(abs(int(k) / R - c) <= box.radius for k, c in zip(a, box.center))


def box_contains_many(box: BoxSpec, sites, params: LatticeParams) -> np.ndarray:
    arr = as_sites(sites, params.d)
    c = np.asarray(box.center, dtype=np.float64)
    return np.all(np.abs(arr / params.R - c) <= box.radius, axis=1)


def unit_box_of(sites, R: int) -> np.ndarray:
    """Index y in Z^d of the unit box Q(y) a site is assigned to.

    y is the component-wise nearest integer to k/R with ties broken toward
    minus infinity, which partitions the lattice.
    """
    arr = np.asarray(sites, dtype=np.int64)
    return -((R - 2 * arr) // (2 * R))


@dataclass
class SparseCounts:
    """Finite nonnegative integer measure on lattice sites.

    Sites are unique rows of ``sites``; ``counts`` holds their multiplicities.
    """

    sites: np.ndarray
    counts: np.ndarray
    d: int = field(default=2)

    def __post_init__(self):
        self.sites = as_sites(self.sites, self.d) if len(self.sites) else np.zeros((0, self.d), np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        if self.sites.shape[0] != self.counts.shape[0]:
            raise ValueError("sites and counts length differ")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")

    @classmethod
    def empty(cls, d: int) -> "SparseCounts":
        return cls(np.zeros((0, d), np.int64), np.zeros(0, np.int64), d)

    @classmethod
    def from_sites(cls, sites, d: int, weights=None) -> "SparseCounts":
        """Aggregate a list of (possibly repeated) sites into counts."""
        arr = as_sites(sites, d) if len(sites) else np.zeros((0, d), np.int64)
        if arr.shape[0] == 0:
            return cls.empty(d)
        keys = encode(arr, d)
        w = np.ones(len(keys), np.int64) if weights is None else np.asarray(weights, np.int64)
        uniq, inv = np.unique(keys, return_inverse=True)
        counts = np.bincount(inv, weights=w, minlength=len(uniq)).astype(np.int64)
        keep = counts > 0
        return cls(decode(uniq[keep], d), counts[keep], d)

    @classmethod
    def from_mapping(cls, mapping: Mapping[Site, int], d: int) -> "SparseCounts":
        items = [(k, v) for k, v in mapping.items() if v]
        if not items:
            return cls.empty(d)
        sites, counts = zip(*items)
        return cls.from_sites(list(sites), d, weights=list(counts))

    def to_dict(self) -> dict[Site, int]:
        return {tuple(int(v) for v in s): int(c) for s, c in zip(self.sites, self.counts)}

    @property
    def mass(self) -> int:
        return int(self.counts.sum())

    def __len__(self) -> int:
        return self.sites.shape[0]

    def keys(self) -> np.ndarray:
        return encode(self.sites, self.d)


def _lattice_range(box: BoxSpec, params: LatticeParams) -> list[tuple[int, int]]:
    return [box.axis_range(i, params.R) for i in range(params.d)]


def neighborhood_sup(points: SparseCounts, params: LatticeParams, window: BoxSpec) -> tuple[int, Site | None]:
    """max over lattice x in ``window`` of the mass of ``points`` inside N(x), and a maximizer.

    Counts are box-summed over (2R+1)^d windows with d-dimensional prefix
    sums on the bounding box, then the centre cell is subtracted.  The
    maximizer is None when the maximum is 0.
    """
    R, d = params.R, params.d
    ranges = _lattice_range(window, params)
    if any(lo > hi for lo, hi in ranges):
        raise ValueError("window contains no lattice points")
    if len(points) == 0 or points.mass == 0:
        return 0, None
    pmin = points.sites.min(axis=0)
    pmax = points.sites.max(axis=0)
    cand = []
    for i, (lo, hi) in enumerate(ranges):
        lo2, hi2 = max(lo, int(pmin[i]) - R), min(hi, int(pmax[i]) + R)
        if lo2 > hi2:
            return 0, None
        cand.append((lo2, hi2))
    base = np.array([lo - R for lo, _ in cand], dtype=np.int64)
    shape = tuple(hi - lo + 1 + 2 * R for lo, hi in cand)
    grid = np.zeros(shape, dtype=np.int64)
    rel = points.sites - base
    inside = np.all((rel >= 0) & (rel < np.array(shape)), axis=1)
    np.add.at(grid, tuple(rel[inside].T), points.counts[inside])
    # box sums of width 2R+1 along each axis via prefix sums
    box = grid
    w = 2 * R + 1
    for ax in range(d):
        cs = np.cumsum(box, axis=ax)
        pad = [(0, 0)] * d
        pad[ax] = (1, 0)
        cs = np.pad(cs, pad)
        hi_sl = [slice(None)] * d
        lo_sl = [slice(None)] * d
        hi_sl[ax] = slice(w, None)
        lo_sl[ax] = slice(0, -w)
        box = cs[tuple(hi_sl)] - cs[tuple(lo_sl)]
    counts = box - grid[tuple(slice(R, R + hi - lo + 1) for lo, hi in cand)]
    best = int(counts.max())
    if best == 0:
        return 0, None
    idx = np.unravel_index(int(np.argmax(counts)), counts.shape)
    return best, tuple(int(i + lo) for i, (lo, _) in zip(idx, cand))


def neighborhood_sup_count(points: SparseCounts, params: LatticeParams, window: BoxSpec) -> int:
    """max over lattice x in ``window`` of the mass of ``points`` inside N(x)."""
    return neighborhood_sup(points, params, window)[0]


def neighborhood_count_bruteforce(points: SparseCounts, x: Sequence[int], params: LatticeParams) -> int:
    """|points ∩ N(x)| with multiplicity, by direct scan (test oracle)."""
    if len(points) == 0:
        return 0
    dist = np.abs(points.sites - np.asarray(x, dtype=np.int64)).max(axis=1)
    mask = (dist > 0) & (dist <= params.R)
    return int(points.counts[mask].sum())


def lattice_points(box: BoxSpec, params: LatticeParams) -> Iterable[Site]:
    import itertools

    ranges = _lattice_range(box, params)
    return itertools.product(*[range(lo, hi + 1) for lo, hi in ranges])
