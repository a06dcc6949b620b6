"""Command-line experiment driver.

    rangepc <subcommand> [--config FILE] [--seed U64] [--threads N]
                         [--out DIR] [--format csv|json] [--key value ...]

Keys come from the JSON config file and are overridden by ``--key value``
flags.  Without ``--out`` the JSON record goes to stdout; with it, the
record is written to DIR/record.json and every table to DIR/<name>.csv
(or .json).  Exit status: 0 all checks passed, 1 some check failed,
2 configuration error (nothing is written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from . import blockperc, brw, estimator, randwalk, sir, tanaka
from .lattice import LatticeParams, as_sites, decode, encode

REQUIRED = object()


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ schemas

_COMMON = {"seed": ("int", 0)}
_LATTICE = {"d": ("int", 2), "R": ("int", REQUIRED)}

SCHEMAS = {
    "sir": {**_LATTICE, "theta": ("float", 0.0), "p": ("float", None), "horizon": ("int", 20),
            "start": ("sites", None)},
    "brw": {**_LATTICE, "theta": ("float", 0.0), "N": ("int", 20), "reps": ("int", 1),
            "start": ("sites", None), "tol": ("float", 1e-9)},
    "couple": {**_LATTICE, "theta": ("float", 0.0), "horizon": ("int", 10), "scenarios": ("int", 20),
               "start": ("sites", None)},
    "tanaka": {**_LATTICE, "theta": ("float", 1.0), "N": ("int", 20), "m": ("int", None), "reps": ("int", 5),
               "anchor": ("ints", None), "start": ("sites", None), "tol": ("float", 1e-8)},
    "kernels": {**_LATTICE, "kind": ("str", "transition"), "n": ("int", 3), "m": ("int", 20),
                "theta": ("float", 1.0), "tol": ("float", 1e-12)},
    "estimate-pc": {**_LATTICE, "R": ("ints", REQUIRED), "G_max": ("int", 200), "trials": ("int", 400),
                    "levels": ("int", 12), "target": ("str", "ratio"), "early_stop": ("float", 5.0),
                    "min_trials": ("int", 400)},
    "scaling": {**_LATTICE, "R": ("ints", REQUIRED), "G_max": ("int", 200), "trials": ("int", 400),
                "levels": ("int", 12), "target": ("str", "ratio"), "early_stop": ("float", 5.0),
                "min_trials": ("int", 400), "gamma_lo": ("float", 0.6), "gamma_hi": ("float", 1.4)},
    "block": {"d": ("int", 2), "R": ("int", 32), "theta": ("float", 4.0), "T": ("float", 3.0),
              "K": ("float", 20.0), "chi": ("float", 16.0), "m": ("float", 20.0), "M": ("float", 4.0),
              "eps0": ("float", 0.01), "budget": ("int", 4), "runs": ("int", 1)},
    "oriented": {"q": ("floats", [0.5, 0.95]), "M": ("int", 0), "N": ("int", 200), "trials": ("int", 200)},
    "battery": {"d": ("int", 2), "R": ("int", 4), "theta": ("float", 4 * math.expm1(0.1)), "n": ("int", 10),
                "reps": ("int", 10000), "lam": ("float", None), "lam_occupation": ("float", None), "radius": ("int", 1),
                "checks": ("strs", ["first", "second", "exponential", "occupation"]), "start": ("sites", None)},
}


def _coerce(kind: str, key: str, v):
    try:
        if v is None:
            return None
        if kind == "int":
            if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
                raise TypeError
            return int(v)
        if kind == "float":
            return float(v)
        if kind == "str":
            if not isinstance(v, str):
                raise TypeError
            return v
        if kind in ("ints", "floats", "strs"):
            items = v if isinstance(v, list) else [v]
            return [_coerce(kind[:-1] if kind != "floats" else "float", key, x) for x in items]
        if kind == "sites":
            return [[int(c) for c in s] for s in v]
    except (TypeError, ValueError):
        pass
    raise ConfigError(f"key {key!r}: cannot read {v!r} as {kind}")


def _parse_flag_value(kind: str, text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if kind in ("ints", "floats", "strs") and "," in text:
            return [s.strip() if kind == "strs" else json.loads(s) for s in text.split(",")]
        return text


def resolve_config(name: str, file_cfg: dict, flags: dict, seed_flag) -> dict:
    """Merge defaults, file and flags; reject unknown or missing keys."""
    if name not in SCHEMAS:
        raise ConfigError(f"unknown subcommand {name!r}")
    schema = {**SCHEMAS[name], **_COMMON}
    merged = {}
    for src in (file_cfg, flags):
        for k, v in src.items():
            if k not in schema:
                raise ConfigError(f"unknown key {k!r} for {name}")
            merged[k] = v
    if seed_flag is not None:
        merged["seed"] = seed_flag
    elif "seed" not in merged and os.environ.get("RANGEPC_SEED"):
        merged["seed"] = os.environ["RANGEPC_SEED"]
    out = {}
    for k, (kind, default) in schema.items():
        if k in merged:
            v = merged[k]
            if isinstance(v, str) and kind not in ("str", "strs"):
                v = _parse_flag_value(kind, v)
            out[k] = _coerce(kind, k, v)
        elif default is REQUIRED:
            raise ConfigError(f"missing required key {k!r} for {name}")
        else:
            out[k] = default
    if out["seed"] < 0 or out["seed"] >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return out


# ------------------------------------------------------------------ records


@dataclass
class ExperimentRecord:
    subcommand: str
    config: dict
    seed: int
    checks: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    version: str = __version__
    wall_time: float | None = None

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def check(self, name: str, passed: bool, value=None, limit=None):
        self.checks.append({"name": name, "passed": bool(passed), "value": _plain(value), "limit": _plain(limit)})

    def to_json(self) -> str:
        rec = asdict(self)
        rec["passed"] = self.passed
        return json.dumps(_plain(rec), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentRecord":
        rec = json.loads(text)
        rec.pop("passed", None)
        return cls(**rec)


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


@dataclass
class Table:
    header: list
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps([dict(zip(self.header, _plain(r))) for r in self.rows], indent=1)


def replica_rng(seed: int, i: int, *key) -> np.random.Generator:
    """Independent stream for replica i of a run with this seed."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,) + key))


def _oracle_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63))


def _params(cfg: dict, R=None) -> randwalk.RunParams:
    d = cfg["d"]
    if d not in (2, 3):
        raise ConfigError("d must be 2 or 3")
    R = cfg["R"] if R is None else R
    if R < 1:
        raise ConfigError("R must be positive")
    return randwalk.RunParams(LatticeParams(d, R), cfg.get("theta", 0.0) or 0.0)


def _start(cfg: dict, d: int) -> np.ndarray:
    s = cfg.get("start")
    return as_sites(s, d) if s else np.zeros((1, d), np.int64)


def _need_positive(cfg: dict, *keys):
    for k in keys:
        if cfg[k] is not None and cfg[k] <= 0:
            raise ConfigError(f"{k} must be positive")


# --------------------------------------------------------------- subcommands


def cmd_sir(cfg, rec, threads):
    prm = _params(cfg)
    p = prm.p if cfg["p"] is None else cfg["p"]
    if not 0 <= p <= 1:
        raise ConfigError("p must lie in [0, 1]")
    oracle = sir.EdgeOracle(cfg["seed"], p, prm.lattice)
    states, verdict = sir.run_sir(_start(cfg, prm.d), [], oracle, cfg["horizon"])
    tab = Table(["generation", "infected", "recovered", "cumulative"])
    disjoint = monotone = True
    prev = np.zeros(0, np.int64)
    for st in states:
        disjoint &= np.intersect1d(st.infected, st.recovered).size == 0
        monotone &= bool(np.all(np.isin(prev, st.recovered)))
        prev = st.recovered
        tab.rows.append([st.n, st.infected.size, st.recovered.size, st.infected.size + st.recovered.size])
    rec.check("infected-recovered-disjoint", disjoint)
    rec.check("recovered-monotone", monotone)
    rec.summary.update(p=p, verdict=verdict.kind, generation=verdict.generation)
    return {"states": tab}


def cmd_brw(cfg, rec, threads):
    prm = _params(cfg)
    _need_positive(cfg, "reps")
    z0 = brw.Population.from_sites(_start(cfg, prm.d), prm.d)
    phi = randwalk.box_indicator(np.zeros(prm.d), 1.0, prm.lattice)
    tab = Table(["rep", "generation", "mass", "mean"])
    worst = 0.0
    for r in range(cfg["reps"]):
        tr = brw.simulate(z0, prm, cfg["N"], replica_rng(cfg["seed"], r))
        mass, mean = brw.gw_stats(tr)
        tab.rows.extend([r, n, int(a), float(b)] for n, (a, b) in enumerate(zip(mass, mean)))
        worst = max(worst, tanaka.verify_mp(tr, phi, cfg["N"]).relative)
    rec.check("martingale-problem", worst <= cfg["tol"], worst, cfg["tol"])
    return {"masses": tab}


def cmd_couple(cfg, rec, threads):
    prm = _params(cfg)
    d = prm.d
    tab = Table(["scenario", "generation", "infected", "modified", "brw", "collisions"])
    bad_dom = bad_cum = 0
    eta0 = _start(cfg, d)
    for s in range(cfg["scenarios"]):
        run = sir.coupled_triple(eta0, [], None, prm, replica_rng(cfg["seed"], s), cfg["horizon"])
        cum_sir = np.zeros(0, np.int64)
        cum_brw = np.zeros(0, np.int64)
        for n, st in enumerate(run.steps):
            zk = encode(st.brw.sites, d) if st.brw.mass else np.zeros(0, np.int64)
            mk = st.modified.to_dict()
            zd = st.brw.to_dict()
            dom = all(mk.get(tuple(int(c) for c in x), 0) >= 1 for x in decode(st.infected, d))
            dom &= all(zd.get(x, 0) >= c for x, c in mk.items())
            bad_dom += not dom
            cum_sir = np.union1d(cum_sir, st.infected)
            cum_brw = np.union1d(cum_brw, zk)
            bad_cum += not np.all(np.isin(cum_sir, cum_brw))
            _, coll = sir.count_collisions(st.collisions) if st.collisions is not None else ({}, 0)
            tab.rows.append([s, n, st.infected.size, st.modified.mass, st.brw.mass, coll])
    rec.check("pointwise-domination", bad_dom == 0, bad_dom, 0)
    rec.check("cumulative-inclusion", bad_cum == 0, bad_cum, 0)
    return {"coupling": tab}


def cmd_tanaka(cfg, rec, threads):
    prm = _params(cfg)
    d = prm.d
    _need_positive(cfg, "N", "reps")
    if d == 2 and prm.theta <= 0:
        raise ConfigError("the d=2 kernel needs theta > 0")
    m = cfg["m"] if cfg["m"] is not None else (randwalk.depth_for_tail(prm) if d == 2 else 60)
    a = tuple(cfg["anchor"]) if cfg["anchor"] else (0,) * d
    if len(a) != d:
        raise ConfigError("anchor has the wrong dimension")
    z0 = brw.Population.from_sites(_start(cfg, d), d)
    tab = Table(["rep", "local_time", "residual", "relative", "mp_relative"])
    worst = 0.0
    phi = randwalk.box_indicator(np.zeros(d), 1.0, prm.lattice)
    for r in range(cfg["reps"]):
        tr = brw.simulate(z0, prm, cfg["N"], replica_rng(cfg["seed"], r))
        rep = tanaka.verify_tanaka(tr, a, cfg["N"], m)
        mp = tanaka.verify_mp(tr, phi, cfg["N"])
        worst = max(worst, rep.relative, mp.relative)
        tab.rows.append([r, tanaka.local_time(tr, a, cfg["N"]), rep.residual, rep.relative, mp.relative])
    rec.check("tanaka-identity", worst <= cfg["tol"], worst, cfg["tol"])
    rec.summary["m"] = m
    return {"residuals": tab}


def cmd_kernels(cfg, rec, threads):
    prm = _params(cfg)
    d, kind = prm.d, cfg["kind"]
    if kind == "transition":
        t = randwalk.transition_exact(cfg["n"], prm)
        vals = t.values
        err = abs(float(vals.sum()) - 1.0)
        rec.check("mass", err <= cfg["tol"], err, cfg["tol"])
        sym = float(np.abs(vals - np.flip(vals)).max())
        rec.check("symmetry", sym <= cfg["tol"], sym, cfg["tol"])
        grid = randwalk.GridFunction.centred(vals, t.radius)
    elif kind in ("g", "phi"):
        if (kind == "g") != (d == 2):
            raise ConfigError("kind g is the d=2 kernel and phi the d=3 kernel")
        if kind == "g" and prm.theta <= 0:
            raise ConfigError("the d=2 kernel needs theta > 0")
        fn = randwalk.kernel_g if kind == "g" else randwalk.kernel_phi
        K = fn((0,) * d, cfg["m"], None, prm)
        grid = K.values
        rec.summary["tail"] = K.tail
        sym = float(np.abs(grid.values - np.flip(grid.values)).max())
        rec.check("symmetry", sym <= cfg["tol"] * max(1.0, float(grid.values.max())), sym, cfg["tol"])
    else:
        raise ConfigError(f"unknown kernel kind {kind!r}")
    sites, v = grid.support_sites()
    tab = Table([f"k_{i + 1}" for i in range(d)] + ["value"])
    tab.rows.extend([int(c) for c in s] + [float(x)] for s, x in zip(sites, v))
    return {"kernel": tab}


def _estimates(cfg, threads):
    _need_positive(cfg, "G_max", "levels")
    if cfg["target"] not in ("ratio", "frequency"):
        raise ConfigError("target is ratio or frequency")
    if any(r < 1 for r in cfg["R"]):
        raise ConfigError("R must be positive")
    if cfg["d"] not in (2, 3):
        raise ConfigError("d must be 2 or 3")
    es = cfg["early_stop"]
    out = []
    for R in cfg["R"]:
        out.append(estimator.estimate_pc(R, cfg["d"], cfg["G_max"], cfg["trials"], cfg["levels"], cfg["seed"],
                                         cfg["target"], threads, None, es if es and es > 0 else None,
                                         cfg["min_trials"]))
    return out


def _estimate_tables(ests):
    est = Table(["R", "d", "G_max", "p_hat", "lo", "hi", "theta_hat", "pV"])
    curve = Table(["R", "p", "trials", "survivals", "half_survivals", "value", "lo", "hi"])
    for e in ests:
        est.rows.append([e.R, e.d, e.G_max, e.p_hat, e.bracket[0], e.bracket[1], e.theta_hat, e.p_hat * e.V])
        for c in e.curve:
            curve.rows.append([e.R, c.p, c.trials, c.survivals, c.half_survivals, c.value, c.wilson[0], c.wilson[1]])
    return {"estimates": est, "curve": curve}


def cmd_estimate_pc(cfg, rec, threads):
    if cfg["trials"] < 100:
        raise ConfigError("need at least 100 trials per level")
    ests = _estimates(cfg, threads)
    pv = [e.p_hat * e.V for e in ests]
    rec.check("above-mean-field", all(x > 1 for x in pv), pv, 1.0)
    rec.summary["capped_runs"] = sum(e.diagnostics["capped_runs"] for e in ests)
    return _estimate_tables(ests)


def cmd_scaling(cfg, rec, threads):
    if cfg["trials"] < 100:
        raise ConfigError("need at least 100 trials per level")
    if len(cfg["R"]) < 3:
        raise ConfigError("scaling needs at least three values of R")
    ests = sorted(_estimates(cfg, threads), key=lambda e: e.R)
    pv = [e.p_hat * e.V for e in ests]
    rec.check("above-mean-field", all(x > 1 for x in pv), pv, 1.0)
    rec.check("decreasing", all(a > b for a, b in zip(pv, pv[1:])), pv)
    if all(x > 1 for x in pv):
        fit = estimator.scaling_fit(ests)
        ok = cfg["gamma_lo"] <= fit.gamma <= cfg["gamma_hi"]
        rec.check("gamma-range", ok, fit.gamma, [cfg["gamma_lo"], cfg["gamma_hi"]])
        rec.summary.update(gamma=fit.gamma, theta=fit.theta, slope_se=fit.slope_se)
    else:
        rec.check("gamma-range", False, None, [cfg["gamma_lo"], cfg["gamma_hi"]])
    return _estimate_tables(ests)


def cmd_block(cfg, rec, threads):
    try:
        bc = blockperc.BlockConfig(cfg["T"], cfg["theta"], cfg["K"], cfg["chi"], cfg["m"], cfg["M"], cfg["eps0"])
        lat = LatticeParams(cfg["d"], cfg["R"])
        prm = bc.params(lat)
        bc.M_tilde(lat.d)
        if prm.T_theta_R < 1:
            raise ValueError("T R^{d-1}/theta must be at least 1")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    steps = Table(["run", "x1", "x2", "case", "tau", "good", "mu", "nu"])
    occ = Table(["run", "x1", "x2"])
    broken = 0
    replay_ok = True
    sizes = []
    for r in range(cfg["runs"]):
        rng = replica_rng(cfg["seed"], r)
        oracle = sir.EdgeOracle(_oracle_seed(rng), prm.p, lat)
        try:
            res = blockperc.block_iteration(bc, oracle, rng, cfg["budget"])
        except AssertionError:
            broken += 1
            continue
        sizes.append(len(res.omega))
        for s in res.steps:
            steps.rows.append([r, s.site[0], s.site[1], s.case, s.tau, s.good, s.mu_size, s.nu_size])
        occ.rows.extend([r, x[0], x[1]] for x in res.omega)
        sched = sir.ImmigrationSchedule(res.mus[0], res.nus[0], blockperc.replay_schedule(res))
        rerun = sir.run_with_immigration(sched, [], oracle, res.taus[-1])
        replay_ok &= rerun.taus == res.taus
    rec.check("recovered-neighbourhood-bound", broken == 0, broken, 0)
    rec.check("replay", replay_ok)
    rec.summary.update(occupied=sizes, kappa=bc.kappa(lat.d), T_theta_R=prm.T_theta_R, R_theta=prm.R_theta)
    return {"steps": steps, "omega": occ}


def cmd_oriented(cfg, rec, threads):
    qs = sorted(cfg["q"])
    if any(not 0 <= q <= 1 for q in qs):
        raise ConfigError("densities must lie in [0, 1]")
    if cfg["M"] < 0 or cfg["N"] < 0 or cfg["trials"] < 1:
        raise ConfigError("M and N must be nonnegative and trials positive")
    s = cfg["M"] // 2 + 1
    nb = cfg["N"] // s + 1
    surv = np.zeros(len(qs), np.int64)
    violations = 0
    for t in range(cfg["trials"]):
        u = replica_rng(cfg["seed"], t).random((nb, nb))
        res = [blockperc.oriented_percolation(q, cfg["M"], cfg["N"], None, u) for q in qs]
        for j, r in enumerate(res):
            surv[j] += r.percolates
        violations += sum(a.percolates and not b.percolates for a, b in zip(res, res[1:]))
    rec.check("monotone-coupling", violations == 0, violations, 0)
    tab = Table(["q", "trials", "survivals", "frequency"])
    tab.rows.extend([q, cfg["trials"], int(k), int(k) / cfg["trials"]] for q, k in zip(qs, surv))
    return {"survival": tab}


def cmd_battery(cfg, rec, threads):
    prm = _params(cfg)
    d = prm.d
    _need_positive(cfg, "n", "reps", "radius")
    r = cfg["radius"] * prm.R
    phi = randwalk.GridFunction.centred(np.ones((2 * r + 1,) * d), r)
    growth = math.exp(cfg["n"] * prm.drift)
    G = randwalk.g_weight(phi, cfg["n"], prm)
    # default multipliers sit halfway to the edge of each bound's range
    lam = cfg["lam"] if cfg["lam"] is not None else 0.5 / (growth * G)
    lam_occ = cfg["lam_occupation"]
    if lam_occ is None:
        lam_occ = 0.5 / (2 * cfg["n"] * growth * G)
    start = [list(x) for x in _start(cfg, d)]
    sc = estimator.MomentScenario(start, cfg["n"], cfg["reps"], phi, lam, cfg["seed"], tuple(cfg["checks"]), lam_occ)
    try:
        results = estimator.moment_battery(prm, sc)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    tab = Table(["check", "statistic", "reference", "z", "passed"])
    for c in results:
        rec.check(c.name, c.passed, c.statistic, c.reference)
        tab.rows.append([c.name, c.statistic, c.reference, c.z, c.passed])
    rec.summary.update(lam=lam, lam_occupation=lam_occ, G=G)
    return {"moments": tab}


COMMANDS = {
    "sir": cmd_sir, "brw": cmd_brw, "couple": cmd_couple, "tanaka": cmd_tanaka, "kernels": cmd_kernels,
    "estimate-pc": cmd_estimate_pc, "scaling": cmd_scaling, "block": cmd_block, "oriented": cmd_oriented,
    "battery": cmd_battery,
}


def run_subcommand(name: str, config: dict, threads: int = 1, timing: bool = False):
    """Resolve ``config``, run the experiment and return (record, tables)."""
    cfg = resolve_config(name, config, {}, None)
    rec = ExperimentRecord(name, {k: v for k, v in cfg.items() if k != "seed"}, cfg["seed"])
    t0 = time.perf_counter()
    tables = COMMANDS[name](cfg, rec, threads)
    if timing:
        rec.wall_time = time.perf_counter() - t0
    return rec, tables


# ---------------------------------------------------------------------- main


def _flag_pairs(tokens: list[str]) -> dict:
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) < 3:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"flag {tok} needs a value")
            val = tokens[i + 1]
            i += 2
        alt = key.replace("-", "_")
        out[alt if alt in _ALL_KEYS else key] = val
    return out


_ALL_KEYS = set().union(*SCHEMAS.values())


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rangepc", description="Range-R epidemic and branching random walk experiments.")
    ap.add_argument("subcommand", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON file with subcommand keys")
    ap.add_argument("--seed", type=int, help="root seed (falls back to $RANGEPC_SEED)")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--format", choices=("csv", "json"), default="csv", help="table format")
    ap.add_argument("--timing", action="store_true", help="record wall time (makes output run-dependent)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args, rest = ap.parse_known_args(argv)
    try:
        file_cfg = {}
        if args.config:
            try:
                with open(args.config) as fh:
                    file_cfg = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config: {exc}") from exc
            if not isinstance(file_cfg, dict):
                raise ConfigError("config file must hold a JSON object")
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = resolve_config(args.subcommand, file_cfg, _flag_pairs(rest), args.seed)
        rec, tables = run_subcommand(args.subcommand, cfg, args.threads, args.timing)
    except (ConfigError, ValueError) as exc:
        print(f"rangepc: config error: {exc}", file=sys.stderr)
        return 2
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for tname, tab in tables.items():
            body = tab.to_csv() if args.format == "csv" else tab.to_json()
            with open(os.path.join(args.out, f"{tname}.{args.format}"), "w", newline="") as fh:
                fh.write(body)
        with open(os.path.join(args.out, "record.json"), "w") as fh:
            fh.write(rec.to_json() + "\n")
    else:
        sys.stdout.write(rec.to_json() + "\n")
    for c in rec.checks:
        if not c["passed"]:
            print(f"rangepc: check failed: {c['name']}", file=sys.stderr)
    return 0 if rec.passed else 1


if __name__ == "__main__":
    sys.exit(main())
