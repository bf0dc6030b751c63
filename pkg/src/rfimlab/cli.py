"""Command-line runner.  Exit codes: 0 success, 1 usage error, 2 invariant
violation detected during the run."""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from . import bootstrap as bp
from . import glauber as gl
from . import gs_evolution as gse
from . import renorm as rn
from .config import ENGINES, SCHEMA, ConfigError, ExperimentConfig, load_config
from .disorder import sample_field
from .groundstate import EnergyModel, brute_force_ground_state, ground_state
from .lattice import Lattice
from .snapshot import Snapshot, field_digest, read_snapshot, write_snapshot

EXIT_OK, EXIT_USAGE, EXIT_VIOLATION = 0, 1, 2


class UsageError(Exception):
    pass


@contextmanager
def parallel_map(workers: int):
    """An order-preserving map, fanned out over processes when workers > 1."""
    if workers <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield lambda fn, items: pool.map(fn, list(items), chunksize=1)


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if x is None:
        return ""
    return x


def write_csv(path: str, columns: Sequence[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])


def write_jsonl(path: str, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


class Run:
    """Output directory plus the violations collected while running."""

    def __init__(self, config: ExperimentConfig, out: str, log: Callable[[str], None]):
        self.config = config
        self.out = out
        self.log = log
        self.violations: list[str] = []
        os.makedirs(out, exist_ok=True)
        with open(self.path("config.ini"), "w") as fh:
            fh.write(config.to_ini())

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def violation(self, message: str) -> None:
        self.violations.append(message)
        self.log(f"invariant violation: {message}")

    @property
    def hash(self) -> str:
        return self.config.config_hash


# --- gs-evolve ---------------------------------------------------------------------


def _gs_task(args):
    d, N, eps, tol, seed = args
    lat = Lattice(d, N, wrap=True)
    fld = sample_field(seed, lat)
    model = EnergyModel(lat, fld, eps)
    s = gse.sweep(model, tol)
    lo_w, hi_w = gse.flip_window(model)
    total = sum(b.size for b in s.breakpoints)
    union = np.zeros(lat.n, dtype=bool)
    overlap = False
    for b in s.breakpoints:
        overlap |= bool((union & b.flip_set).any())
        union |= b.flip_set
    window_ok = bool(((s.flip_time >= lo_w - tol) & (s.flip_time <= hi_w + tol)).all())
    return {
        "N": N,
        "seed": seed,
        "M_G": s.M_G,
        "M_star": s.M_star,
        "n": lat.n,
        "partition_ok": total == lat.n and not overlap and bool(union.all()),
        "window_ok": window_ok,
        "breakpoints": [
            {
                "M_lo": b.M_lo,
                "M_hi": b.M_hi,
                "size": b.size,
                "components": [len(c) for c in b.components],
                "merged": b.merged,
            }
            for b in s.breakpoints
        ],
    }


def run_gs_evolve(run: Run) -> None:
    cfg = run.config
    sizes = cfg.get("sizes") or [cfg["N"]]
    seeds = cfg["seeds"]
    tasks = [(cfg["d"], N, cfg["eps"], cfg["tol"], s) for N in sizes for s in seeds]
    with parallel_map(cfg.workers) as pmap:
        results = list(pmap(_gs_task, tasks))
    rows, bp_rows, events = [], [], []
    for i, r in enumerate(results):
        trial = i % len(seeds)
        if not r["partition_ok"]:
            run.violation(f"breakpoints do not partition the lattice (N={r['N']}, seed={r['seed']})")
        if not r["window_ok"]:
            run.violation(f"flip time outside its window (N={r['N']}, seed={r['seed']})")
        rows.append(
            {
                "N": r["N"],
                "trial": trial,
                "seed": r["seed"],
                "M_G": r["M_G"],
                "M_star": r["M_star"],
                "M_G_frac": r["M_G"] / r["n"],
                "M_G_over_logN": r["M_G"] / math.log(r["N"]),
                "config_hash": run.hash,
            }
        )
        for k, b in enumerate(r["breakpoints"]):
            row = {"N": r["N"], "trial": trial, "seed": r["seed"], "index": k, **b, "config_hash": run.hash}
            row["components"] = " ".join(map(str, b["components"]))
            bp_rows.append(row)
            events.append({"N": r["N"], "seed": r["seed"], "index": k, **b})
    write_csv(run.path("avalanches.csv"), gse.CSV_COLUMNS, rows)
    write_csv(
        run.path("breakpoints.csv"),
        ["N", "trial", "seed", "index", "M_lo", "M_hi", "size", "components", "merged", "config_hash"],
        bp_rows,
    )
    write_jsonl(run.path("events.jsonl"), events)


# --- glauber -----------------------------------------------------------------------


def _nesting_ok(lat, fld, eps, boundary, M1, M2) -> bool:
    state = gl.GlauberState.all_minus(lat, fld, eps, boundary)
    state.evolve(M1)
    state.evolve(M2)
    return bool(np.array_equal(state.spins, gl.glauber_at(lat, fld, eps, M2, boundary)))


def _glauber_task(args):
    d, N, wrap, boundary, eps, M_end, grid, check_nesting, seed = args
    lat = Lattice(d, N, wrap=wrap)
    fld = sample_field(seed, lat)
    events, state = gl.glauber_evolve(lat, fld, eps, M_end, boundary)
    out = {
        "seed": seed,
        "events": [
            {"M": e.M, "seed_vertex": e.seed_vertex, "size": e.size, "plus_fraction_after": e.plus_fraction_after}
            for e in events
        ],
        "curve": gl.plus_fraction_curve(events, lat.n, np.asarray(grid)).tolist() if grid else [],
        "plus_fraction": float((state.spins > 0).mean()),
        "largest_event": max((e.size for e in events), default=0),
        "fixed_point_ok": bool(np.array_equal(state.spins, gl.glauber_at(lat, fld, eps, M_end, state.boundary))),
        "domination_violations": len(gl.domination_violations(state)) if state.boundary != "free" else None,
        "nesting_ok": None,
        "gs_dominated": None,
        "spins": state.spins,
        "digest": field_digest(fld.values),
        "boundary": state.boundary,
    }
    if check_nesting:
        pts = sorted(grid) if grid and len(grid) >= 2 else [M_end - 2.0, M_end - 1.0, M_end]
        out["nesting_ok"] = all(
            _nesting_ok(lat, fld, eps, state.boundary, a, b) for a, b in zip(pts, pts[1:]) if a < b
        )
    if lat.n <= 4096 and state.boundary != "free":
        gs = ground_state(EnergyModel(lat, fld, eps, M_end, None if wrap else "minus"))
        out["gs_dominated"] = gl.ground_state_domination(state.spins, gs)["dominated"]
    return out


def run_glauber(run: Run) -> None:
    cfg = run.config
    wrap = cfg.get("wrap", True)
    boundary = cfg.get("boundary") or ("torus" if wrap else "minus")
    grid = cfg.get("M_grid") or []
    tasks = [
        (cfg["d"], cfg["N"], wrap, boundary, cfg["eps"], cfg["M_end"], grid, cfg.get("check_nesting", False), s)
        for s in cfg["seeds"]
    ]
    with parallel_map(cfg.workers) as pmap:
        results = list(pmap(_glauber_task, tasks))
    events, summary, curve = [], [], []
    for r in results:
        seed = r["seed"]
        if not r["fixed_point_ok"]:
            run.violation(f"event-driven state differs from the fixed point (seed={seed})")
        if r["domination_violations"]:
            run.violation(f"{r['domination_violations']} flips break the neighbour-count chain (seed={seed})")
        if r["nesting_ok"] is False:
            run.violation(f"nesting fails (seed={seed})")
        for e in r["events"]:
            events.append({"seed": seed, **e})
        for M, f in zip(grid, r["curve"]):
            curve.append({"seed": seed, "M": M, "plus_fraction": f, "config_hash": run.hash})
        if any(b < a for a, b in zip(r["curve"], r["curve"][1:])):
            run.violation(f"plus fraction decreases in M (seed={seed})")
        summary.append(
            {
                "seed": seed,
                "boundary": r["boundary"],
                "events": len(r["events"]),
                "largest_event": r["largest_event"],
                "plus_fraction": r["plus_fraction"],
                "domination_violations": r["domination_violations"],
                "nesting_ok": r["nesting_ok"],
                "gs_dominated": r["gs_dominated"],
                "config_hash": run.hash,
            }
        )
        if cfg.get("snapshot"):
            lat = Lattice(cfg["d"], cfg["N"], wrap=wrap)
            snap = Snapshot.of_spins(lat, r["spins"], seed=seed, M=cfg["M_end"], eps=cfg["eps"], digest=r["digest"])
            write_snapshot(run.path(f"spins_{seed}.snap"), snap)
    write_jsonl(run.path("events.jsonl"), events)
    write_csv(run.path("summary.csv"), list(summary[0]) if summary else ["seed"], summary)
    if grid:
        write_csv(run.path("curve.csv"), ["seed", "M", "plus_fraction", "config_hash"], curve)


def _glauber_t_task(args):
    d, N, wrap, boundary, eps, T, alpha, M_lo, M_hi, grid, seed = args
    lat = Lattice(d, N, wrap=wrap)
    samples = gl.positive_T_glauber(lat, sample_field(seed, lat), eps, T, alpha, M_lo, M_hi, seed, grid, boundary)
    return seed, [(s.M, s.magnetization, s.plus_fraction) for s in samples]


def run_glauber_t(run: Run) -> None:
    cfg = run.config
    wrap = cfg.get("wrap", True)
    boundary = cfg.get("boundary") or ("torus" if wrap else "minus")
    grid = cfg.get("M_grid")
    tasks = [
        (cfg["d"], cfg["N"], wrap, boundary, cfg["eps"], cfg["T"], cfg["alpha"], cfg["M_lo"], cfg["M_hi"], grid, s)
        for s in cfg["seeds"]
    ]
    with parallel_map(cfg.workers) as pmap:
        results = list(pmap(_glauber_t_task, tasks))
    rows = [
        {"seed": seed, "M": M, "magnetization": m, "plus_fraction": f, "config_hash": run.hash}
        for seed, samples in results
        for M, m, f in samples
    ]
    write_csv(run.path("samples.csv"), ["seed", "M", "magnetization", "plus_fraction", "config_hash"], rows)


# --- bootstrap ---------------------------------------------------------------------


def _rule(cfg: ExperimentConfig, d: int) -> bp.BPRule:
    return bp.BPRule(cfg.get("r", d), cfg.get("modified", False), cfg.get("closed_flippable_at"))


def _check_bootstrap(run: Run, lat, initial, rule, label, scales):
    final, trace = bp.bp_final(lat, initial, rule, trace=True)
    stats = bp.cluster_stats(final)
    u_ok = bp.u_monitor(trace) if not lat.wrap else None
    # the seed bound needs every opening to use two open neighbours
    two_needed = rule.threshold >= 2 and (rule.closed_flippable_at is None or rule.closed_flippable_at >= 2)
    bound_ok = all(s.satisfies_seed_bound for s in stats) if two_needed else None
    boxed_ok = None
    if scales and not lat.wrap:
        boxed_ok = bp.bp_final_boxed(lat, initial, rule, scales) == final
    if u_ok is False:
        run.violation(f"U increased ({label})")
    if bound_ok is False:
        run.violation(f"a cluster has too few initially open sites ({label})")
    if boxed_ok is False:
        run.violation(f"staged box evolution disagrees ({label})")
    summary = {
        "density": float(final.open.mean()),
        "clusters": len(stats),
        "max_diameter": max((s.diameter for s in stats), default=0),
        "u_ok": u_ok,
        "seed_bound_ok": bound_ok,
        "boxed_ok": boxed_ok,
    }
    return final, stats, summary


BOOT_COLUMNS = ["seed", "p", "q", "density", "clusters", "max_diameter", "u_ok", "seed_bound_ok", "boxed_ok", "config_hash"]
CLUSTER_COLUMNS = ["seed", "label", "size", "diameter", "initial_count", "config_hash"]


def run_bootstrap(run: Run) -> None:
    cfg = run.config
    rows, crows = [], []
    if cfg.get("input"):
        snap = read_snapshot(cfg["input"])
        initial = snap.site_config()
        lat = initial.lattice
        jobs = [(snap.seed, None, None, initial)]
    else:
        missing = [k for k in ("d", "N", "p", "q", "seeds") if cfg.get(k) is None]
        if missing:
            raise ConfigError(f"bootstrap needs an input snapshot or: {', '.join(missing)}")
        lat = Lattice(cfg["d"], cfg["N"], wrap=cfg.get("wrap", False))
        jobs = [(s, cfg["p"], cfg["q"], bp.sample_sites(s, lat, cfg["p"], cfg["q"])) for s in cfg["seeds"]]
    rule = _rule(cfg, lat.dim)
    rule.check(lat.dim)
    for seed, p, q, initial in jobs:
        final, stats, summary = _check_bootstrap(run, lat, initial, rule, f"seed={seed}", cfg.get("scales"))
        rows.append({"seed": seed, "p": p, "q": q, **summary, "config_hash": run.hash})
        for s in stats:
            crows.append({"seed": seed, "label": s.label, "size": s.size, "diameter": s.diameter,
                          "initial_count": s.initial_count, "config_hash": run.hash})
        if cfg.get("snapshot") or cfg.get("input"):
            write_snapshot(run.path(f"final_{seed}.snap"), Snapshot.of_sites(final, seed=seed))
    write_csv(run.path("summary.csv"), BOOT_COLUMNS, rows)
    write_csv(run.path("clusters.csv"), CLUSTER_COLUMNS, crows)


def run_phase_scan(run: Run) -> None:
    cfg = run.config
    d = cfg["d"]
    with parallel_map(cfg.workers) as pmap:
        rows = bp.phase_scan(
            d,
            cfg["p_grid"],
            cfg["q_law"],
            cfg["c"],
            cfg["N"],
            cfg["seeds"],
            rule=_rule(cfg, d),
            wrap=cfg.get("wrap", False),
            map_fn=pmap,
            config_hash=run.hash,
        )
    write_csv(run.path("phase.csv"), bp.PHASE_COLUMNS, rows)


# --- renorm ------------------------------------------------------------------------


def _tiles_task(args):
    d, N, wrap, eps, M, seed = args
    lat = Lattice(d, N, wrap=wrap)
    return {"seed": seed, **rn.renormalization_exceptions(lat, sample_field(seed, lat), eps, M)}


def run_renorm(run: Run) -> None:
    cfg = run.config
    d = cfg["d"]
    if cfg["mode"] == "pn":
        missing = [k for k in ("p", "q") if cfg.get(k) is None]
        if missing:
            raise ConfigError(f"renorm pn needs: {', '.join(missing)}")
        rows = rn.estimate_pn(
            d, cfg["p"], cfg["q"], cfg["K"], cfg["n_values"], cfg["seeds"], D=cfg["D"],
            rule=_rule(cfg, d), config_hash=run.hash,
        )
        write_csv(run.path("pn.csv"), rn.PN_COLUMNS, rows)
        return
    if cfg["mode"] != "tiles":
        raise ConfigError(f"unknown renorm mode {cfg['mode']!r}")
    missing = [k for k in ("N", "eps", "M") if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"renorm tiles needs: {', '.join(missing)}")
    tasks = [(d, cfg["N"], cfg.get("wrap", True), cfg["eps"], cfg["M"], s) for s in cfg["seeds"]]
    with parallel_map(cfg.workers) as pmap:
        results = list(pmap(_tiles_task, tasks))
    for r in results:
        r["tiles"] = "x".join(map(str, r["tiles"]))
        r["config_hash"] = run.hash
        if r["exceptions"]:
            run.violation(f"{r['exceptions']} minus vertices inside coarse-open tiles (seed={r['seed']})")
    cols = ["seed", "L", "p", "tiles", "coarse_open_initial", "coarse_open_final", "fine_plus", "exceptions", "config_hash"]
    write_csv(run.path("renorm.csv"), cols, results)


# --- selftest ----------------------------------------------------------------------


def run_selftest(run: Run) -> None:
    """Quick battery of exact cross-checks on small instances."""
    seeds = run.config.get("seeds") or list(range(50))
    rows = []
    lat = Lattice(2, 3)
    bad = 0
    for s in seeds:
        model = EnergyModel(lat, sample_field(s, lat), [0.1, 1.0, 10.0][s % 3], [-1.0, 0.0, 1.0][s % 3])
        bad += not np.array_equal(ground_state(model), brute_force_ground_state(model))
    rows.append({"check": "ground state vs enumeration", "cases": len(seeds), "failures": bad})
    lat = Lattice(2, 16)
    bad = 0
    for s in seeds:
        fld = sample_field(s, lat)
        bad += not all(_nesting_ok(lat, fld, 1.0, "torus", a, b) for a, b in ((0.5, 1.5), (1.0, 2.0), (-1.0, 3.0)))
    rows.append({"check": "glauber nesting", "cases": len(seeds), "failures": bad})
    lat = Lattice(2, 32, wrap=False)
    bad = 0
    for s in seeds:
        cfg = bp.sample_sites(s, lat, 0.05, 0.0025)
        rule = bp.BPRule(2)
        final, trace = bp.bp_final(lat, cfg, rule, trace=True)
        ok = bp.u_monitor(trace) and final == bp.bp_final_synchronous(lat, cfg, rule)
        ok = ok and final == bp.bp_final_boxed(lat, cfg, rule, [4, 8])
        bad += not ok
    rows.append({"check": "bootstrap fixed point, U and staged boxes", "cases": len(seeds), "failures": bad})
    for r in rows:
        r["config_hash"] = run.hash
        if r["failures"]:
            run.violation(f"{r['check']}: {r['failures']} failures")
    write_csv(run.path("selftest.csv"), ["check", "cases", "failures", "config_hash"], rows)


RUNNERS = {
    "gs-evolve": run_gs_evolve,
    "glauber": run_glauber,
    "glauber-t": run_glauber_t,
    "bootstrap": run_bootstrap,
    "phase-scan": run_phase_scan,
    "renorm": run_renorm,
    "selftest": run_selftest,
}


def run(config: ExperimentConfig, out: str, log: Callable[[str], None] = lambda m: print(m, file=sys.stderr)) -> int:
    """Dispatch to the engine; returns the exit status."""
    try:
        r = Run(config, out, log)
        RUNNERS[config.engine](r)
    except (ValueError, OSError) as exc:
        # ConfigError and SnapshotError are ValueErrors too
        log(f"error: {exc}")
        return EXIT_USAGE
    if r.violations:
        return EXIT_VIOLATION
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rfimlab", description="RFIM ground states, Glauber dynamics and polluted bootstrap percolation.")
    sub = parser.add_subparsers(dest="engine", required=True, parser_class=_Parser)
    for engine in ENGINES:
        sp = sub.add_parser(engine)
        sp.add_argument("--config", help="INI file with a section per engine")
        sp.add_argument("--out", default=f"rfimlab_{engine}", help="output directory")
        for key, (_, default, text) in SCHEMA.items():
            flag = "--" + key.replace("_", "-")
            sp.add_argument(flag, dest=key, default=None, help=f"{text} (default: {default})" if default is not None else text)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        overrides = {k: getattr(args, k) for k in SCHEMA}
        config = load_config(args.engine, args.config, overrides)
    except (UsageError, ConfigError) as exc:
        print(f"rfimlab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return run(config, args.out)


if __name__ == "__main__":
    sys.exit(main())
