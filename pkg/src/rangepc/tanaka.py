"""Local times of the branching random walk and pathwise checks of the
semimartingale decomposition behind them.

Both checks are algebraic identities for a fixed trajectory, so residuals
are pure rounding error.  Sums use compensated summation.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .brw import Trajectory, barred, martingale_increments, measure_apply
from .lattice import BoxSpec, SparseCounts, neighborhood_sup
from .randwalk import RunParams, kernel_g, kernel_phi


@dataclass
class TanakaReport:
    lhs: float
    initial: float
    terminal: float
    martingale: float
    drift: float
    correction: float
    kind: str = "tanaka"

    @property
    def residual(self) -> float:
        return self.lhs - math.fsum([self.initial, self.terminal, self.martingale, self.drift, self.correction])

    @property
    def scale(self) -> float:
        parts = [self.lhs, self.initial, self.terminal, self.martingale, self.drift, self.correction]
        return 1.0 + max(abs(v) for v in parts)

    @property
    def relative(self) -> float:
        return abs(self.residual) / self.scale

    def to_json(self) -> str:
        rec = asdict(self)
        rec["residual"] = self.residual
        rec["relative_residual"] = self.relative
        return json.dumps(rec, sort_keys=True)


def _check_N(traj: Trajectory, N: int):
    if N < 0 or N > traj.N:
        raise ValueError(f"N={N} outside 0..{traj.N}")


def local_time(traj: Trajectory, a, N: int) -> int:
    """sum_{n<N} Z_n(N(a)): particles within range R of a, a itself excluded."""
    _check_N(traj, N)
    a = np.asarray(a, dtype=np.int64)
    R = traj.params.R
    total = 0
    for z in traj.populations[:N]:
        if z.mass == 0:
            continue
        dist = np.abs(z.sites - a).max(axis=1)
        total += int(z.counts.counts[(dist > 0) & (dist <= R)].sum())
    return total


def occupation(traj: Trajectory, N: int) -> SparseCounts:
    """sum_{n<N} Z_n as a site-count measure."""
    _check_N(traj, N)
    d = traj.params.d
    pops = [z for z in traj.populations[:N] if z.mass]
    if not pops:
        return SparseCounts.empty(d)
    sites = np.concatenate([z.sites for z in pops])
    counts = np.concatenate([z.counts.counts for z in pops])
    return SparseCounts.from_sites(sites, d, counts)


def sup_local_time(traj: Trajectory, window: BoxSpec | None, N: int) -> tuple[int, tuple | None]:
    """max over lattice a in ``window`` of local_time(traj, a, N), with a maximizer.

    With ``window=None`` the maximum is over the whole lattice.
    """
    occ = occupation(traj, N)
    if occ.mass == 0:
        return 0, None
    prm = traj.params
    if window is None:
        lo, hi = occ.sites.min(axis=0), occ.sites.max(axis=0)
        R = prm.R
        window = BoxSpec(tuple((lo + hi) / 2 / R), float((hi - lo).max() / 2 / R + 1.0 + 1.0 / R))
    return neighborhood_sup(occ, prm.lattice, window)


def _occupation_sum(traj: Trajectory, phi, N: int) -> float:
    return math.fsum(measure_apply(z, phi) for z in traj.populations[:N])


def verify_mp(traj: Trajectory, phi, N: int) -> TanakaReport:
    """Z_N(phi) = Z_0(phi) + M_N(phi) + (1+drift) sum Z_n(L phi) + drift sum Z_n(phi)."""
    _check_N(traj, N)
    prm = traj.params
    drift = prm.drift
    s_phi = _occupation_sum(traj, phi, N)
    gen = _occupation_sum(traj, barred(phi, prm), N) - s_phi
    mart = math.fsum(martingale_increments(traj, phi, N))
    return TanakaReport(
        lhs=measure_apply(traj.populations[N], phi),
        initial=measure_apply(traj.populations[0], phi),
        terminal=0.0,
        martingale=mart,
        drift=math.fsum([(1 + drift) * gen, drift * s_phi]),
        correction=0.0,
        kind="martingale-problem",
    )


def _extent(traj: Trajectory, a, N: int) -> int:
    a = np.asarray(a, dtype=np.int64)
    ext = 0
    for z in traj.populations[: N + 1]:
        if z.mass:
            ext = max(ext, int(np.abs(z.sites - a).max()))
    return ext


def kernel_for(traj: Trajectory, a, N: int, m: int):
    """Truncated kernel anchored at a, windowed to cover the trajectory dilated by R."""
    prm = traj.params
    W = _extent(traj, a, N) + prm.R
    window = None if W >= (m + 1) * prm.R else W
    if prm.d == 3:
        return kernel_phi(a, m, window, prm)
    return kernel_g(a, m, window, prm)


def verify_tanaka(traj: Trajectory, a, N: int, m: int, include_correction: bool = True,
                  kernel=None) -> TanakaReport:
    """Local time at a written through the truncated kernel at depth m.

    d=3 uses phi = R V sum_{n<=m} p_n(. - a); d=2 uses the damped kernel
    g = V sum_{n<=m} e^{-n theta/R} p_n(. - a).  The leftover term from the
    truncation is included exactly, so the identity holds at every m.
    """
    _check_N(traj, N)
    prm: RunParams = traj.params
    a = tuple(int(v) for v in a)
    drift = prm.drift
    if N == 0:
        return TanakaReport(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    K = kernel if kernel is not None else kernel_for(traj, a, N, m)
    s_phi = _occupation_sum(traj, K, N)
    s_corr = _occupation_sum(traj, K.correction, N) if include_correction else 0.0
    lt = local_time(traj, a, N)
    if prm.d == 3:
        lhs = (1 + drift) * prm.R * lt
        drift_term = drift * s_phi
    else:
        lhs = (1 + drift) * lt
        drift_term = (math.expm1(prm.theta / prm.R) * (1 + drift) + drift) * s_phi
    return TanakaReport(
        lhs=lhs,
        initial=measure_apply(traj.populations[0], K),
        terminal=-measure_apply(traj.populations[N], K),
        martingale=math.fsum(martingale_increments(traj, K, N)),
        drift=drift_term,
        correction=(1 + drift) * s_corr,
    )
