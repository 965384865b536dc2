"""Command-line runner: solve -> measure -> check -> report."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, expression_payload, load_config
from .energy import MetricMap, gradient_density, parallelogram_residual, pullback_trace
from .errors import ConfigError, NPCError, NumericalFailure, ResolutionError
from .grid import ball_mask, build_grid, dyadic_cubes
from .io import load_map, save_map, write_field_csv, write_table_csv
from .regularity import (
    boundary_rhi_check,
    caccioppoli_search,
    center_of_mass,
    gehring_gain,
    holder_exponent,
    reverse_holder_check,
    sobolev_poincare_constant,
)
from .solver import edge_energy, interpolate_maps, quasiminimality_ratio, solve_dirichlet

THREADS_ENV = "NPCHARM_THREADS"


# ---------------------------------------------------------------------------
# helpers


def _centre(grid):
    c = [s // 2 for s in grid.shape]
    if grid.flat_axis_lower:
        c[-1] = 0
    return tuple(c)


def _rng(seed, name):
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def _vertex(grid, x):
    return grid.nearest_vertex(x)


def _clean(obj):
    """JSON-safe copy with non-finite floats spelled out."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    return obj


def report_hash(report: dict) -> str:
    body = {k: v for k, v in report.items() if k not in ("timing", "report_hash", "paths")}
    return hashlib.sha256(json.dumps(_clean(body), sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# checks; each returns (passed, certificate dict, extras)


def check_holder(u, cfg, opts, rng, ctx):
    grid = u.grid
    boundary = bool(opts.get("boundary", grid.flat_axis_lower))
    centers = [_vertex(grid, c) for c in opts["centers"]] if "centers" in opts else [_centre(grid)]
    fits = [holder_exponent(u, c, opts.get("radii"), boundary=boundary) for c in centers]
    ctx["holder"] = fits
    ok = all(f.constant_map or f.alpha > 0 for f in fits)
    return ok, {"fits": [f.to_dict() for f in fits]}


def _interior_reach(grid, c):
    return grid.distance_to_boundary(c) - grid.spacing


def check_caccioppoli(u, cfg, opts, rng, ctx):
    grid = u.grid
    c = _vertex(grid, opts["center"]) if "center" in opts else _centre(grid)
    R = float(opts.get("radius", 0.8 * _interior_reach(grid, c)))
    fr = [(0.2, 0.5), (0.3, 0.6), (0.4, 0.8), (0.5, 1.0), (0.25, 0.75), (0.6, 0.9)]
    triples = [(a * Rk, b * Rk, Rk) for Rk in (0.6 * R, R) for a, b in fr]
    p0 = center_of_mass(u, ball_mask(grid, c, R) & grid.domain)
    rep = caccioppoli_search(u, p0, c, triples)
    return rep.certified and len(triples) >= 10, {**rep.to_dict(), "p0": p0.payload.tolist()}


def _w_field(u, q_hat):
    return pullback_trace(u).map(lambda v: v ** (q_hat / 2.0))


def check_rhi(u, cfg, opts, rng, ctx):
    grid = u.grid
    n = grid.dim
    q_hat = float(opts.get("q_hat", 0.75 * n))
    sides = opts.get("sides", [4, 8, 16])
    w = _w_field(u, q_hat)
    pairs = dyadic_cubes(grid, sides, mask=w.mask, stride=int(opts.get("stride", 1)))
    cert = reverse_holder_check(w, None, n / q_hat, pairs)
    ctx["rhi"] = (w, cert)
    return cert.certified, {**cert.to_dict(), "q_hat": q_hat, "sides": list(sides)}


def check_gehring(u, cfg, opts, rng, ctx):
    if "rhi" not in ctx:
        check_rhi(u, cfg, ctx["options"].get("rhi", {}), rng, ctx)
    w, cert = ctx["rhi"]
    rep = gehring_gain(w, None, cert.q, cert)
    ctx["gehring"] = rep
    return rep.gain > 0 and rep.monotone, rep.to_dict()


def check_poincare(u, cfg, opts, rng, ctx):
    grid = u.grid
    n = grid.dim
    p = float(opts.get("p", n))
    q = float(opts.get("q", n))
    if "balls" in opts:
        balls = [(_vertex(grid, b["center"]), float(b["radius"])) for b in opts["balls"]]
    else:
        c = _centre(grid)
        balls = [(c, grid.distance_to_boundary(c) / 4.5)]
    rep = sobolev_poincare_constant(u, p, q, balls)
    return bool(np.isfinite(rep.max_constant)), rep.to_dict()


def check_boundary(u, cfg, opts, rng, ctx):
    grid = u.grid
    if not grid.flat_axis_lower:
        raise ConfigError("the boundary check needs a half_ball or graph domain", field="checks")
    if "expression" not in cfg.boundary:
        raise ConfigError("the boundary check needs expression boundary data", field="boundary")
    full = build_grid({**grid.descriptor, "kind": "ball"}, grid.shape[0], grid.spacing)
    h_map = MetricMap(full, u.space, expression_payload(cfg.boundary["expression"], full, u.space))
    n = grid.dim
    p = float(opts.get("p", n + 2))
    c0 = grid.shape[0] // 2
    R = float(grid.descriptor.get("radius", 1.0))
    if "centers" in opts:
        centers = [_vertex(grid, c) for c in opts["centers"]]
    else:
        step = max(1, int(round(0.15 * R / grid.spacing)))
        depth = max(1, int(round(0.2 * R / grid.spacing)))
        centers = [(c0 - step, 0), (c0, 0), (c0 + step, 0), (c0, depth), (c0, 2 * depth)]
    radii = opts.get("radii", [0.1 * R, 0.15 * R, 0.2 * R, 0.25 * R])
    cert = boundary_rhi_check(u, h_map, p, centers, radii)
    d = cert.to_dict()
    d["pairs"] = [[list(c), r] for c, r in cert.pairs]
    d["branches"] = cert.branches
    return cert.certified and len(cert.pairs) >= 1, d


def check_parallelogram(u, cfg, opts, rng, ctx):
    grid = u.grid
    Z = np.eye(grid.dim)[0]
    W = np.eye(grid.dim)[1]
    res = parallelogram_residual(u, Z, W)
    v = res.values[res.mask]
    mean = float(np.mean(v)) if v.size else 0.0
    tol = float(opts.get("tol", 5 * grid.spacing))
    return mean < tol, {"mean_residual": mean, "max_residual": float(np.max(v, initial=0.0)), "tol": tol}


def check_convexity(u, cfg, opts, rng, ctx):
    grid = u.grid
    space = u.space
    vals = u.values.copy()
    noise = space.random_payload(rng, grid.shape)
    vals[grid.interior] = noise[grid.interior]
    u1 = MetricMap(grid, space, space.normalize(vals))
    E0, E1 = edge_energy(u, 2.0), edge_energy(u1, 2.0)
    rows = []
    ok = True
    for t in (0.25, 0.5, 0.75):
        Et = edge_energy(interpolate_maps(u, u1, t), 2.0)
        bound = (1 - t) * E0 + t * E1
        rows.append({"t": t, "E_t": Et, "bound": bound})
        ok &= Et <= bound + 1e-9
    return bool(ok), {"E0": E0, "E1": E1, "rows": rows}


def check_quasiratio(u, cfg, opts, rng, ctx):
    grid = u.grid
    c = _vertex(grid, opts["center"]) if "center" in opts else _centre(grid)
    reach = _interior_reach(grid, c)
    fracs = opts.get("fractions", [0.3, 0.5, 0.7])
    subs = [ball_mask(grid, c, f * reach) & grid.interior for f in fracs]
    cert = quasiminimality_ratio(u, cfg.solver.exponent(grid), subs, cfg.solver)
    ctx["quasiratio"] = cert
    return bool(np.isfinite(cert.q_hat)), cert.to_dict()


CHECK_FUNCS = {
    "holder": check_holder,
    "caccioppoli": check_caccioppoli,
    "rhi": check_rhi,
    "gehring": check_gehring,
    "poincare": check_poincare,
    "boundary": check_boundary,
    "parallelogram": check_parallelogram,
    "convexity": check_convexity,
    "quasiratio": check_quasiratio,
}


# ---------------------------------------------------------------------------
# pipeline


def _ks_ratio(u, p):
    try:
        dens = gradient_density(u, p)
    except ResolutionError:
        return None
    ks = dens.integral()
    edge = edge_energy(u, p, region=dens.mask)
    return ks / edge if edge > 0 else None


def run(cfg: ExperimentConfig, stage="report", out=None, seed=None, threads=None, map_path=None):
    """Execute a stage and write its outputs; returns (report dict, exit code)."""
    seed = cfg.seed if seed is None else int(seed)
    threads = int(threads or os.environ.get(THREADS_ENV, 1) or 1)
    out = Path(out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    timing = {}
    report = {
        "software": f"npcharm {__version__}",
        "config_hash": cfg.digest(),
        "config": cfg.echo(),
        "seed": seed,
        "stage": stage,
        "checks": {},
    }
    paths = {}
    code = 0

    t0 = time.perf_counter()
    grid = cfg.build_grid()
    space = cfg.build_space()
    report["grid"] = {"dim": grid.dim, "shape": list(grid.shape), "h": grid.spacing, "domain": grid.descriptor}
    report["target"] = space.descriptor()
    p = cfg.solver.exponent(grid)

    if map_path is not None:
        u = load_map(map_path, space=space, dim=grid.dim, shape=grid.shape)
        report["solve"] = {"loaded": str(map_path), "energy": edge_energy(u, p)}
    else:
        solver_cfg = cfg.solver
        if solver_cfg.order == "shuffled" and seed != solver_cfg.seed:
            from dataclasses import replace

            solver_cfg = replace(solver_cfg, seed=seed)
        try:
            u = solve_dirichlet(grid, space, cfg.boundary_values(grid, space), solver_cfg)
        except NumericalFailure as exc:
            report["solve"] = {"error": str(exc)}
            if exc.partial is not None:
                report["solve"]["energies"] = exc.partial.meta.get("energies", [])
            report["passed"] = False
            report["timing"] = {"solve": time.perf_counter() - t0}
            _finish(report, out)
            return report, 2
        report["solve"] = {
            "energy": u.meta["energies"][-1],
            "energies": u.meta["energies"],
            "sweeps": u.meta["sweeps"],
            "converged": u.meta["converged"],
            "p": p,
            "ks_to_edge_ratio": _ks_ratio(u, p),
        }
    map_file = out / "map.bin"
    save_map(u, map_file)
    paths["map"] = str(map_file)
    timing["solve"] = time.perf_counter() - t0

    ctx = {"options": cfg.options}
    if stage in ("check", "report"):
        if not cfg.checks:
            raise ConfigError("no checks requested for a check run", field="checks")
        names = [c for c in cfg.checks if c != "gehring"]

        def one(name):
            t = time.perf_counter()
            try:
                ok, cert = CHECK_FUNCS[name](u, cfg, cfg.options.get(name, {}) or {}, _rng(seed, name), ctx)
                res = {"passed": bool(ok), **cert}
            except (NPCError, ValueError) as exc:
                res = {"passed": False, "error": f"{type(exc).__name__}: {exc}"}
            return name, res, time.perf_counter() - t

        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            results = list(pool.map(one, names))
        if "gehring" in cfg.checks:
            results.append(one("gehring"))
        for name, res, dt in sorted(results, key=lambda r: cfg.checks.index(r[0])):
            report["checks"][name] = res
            timing[f"check_{name}"] = dt
        if not all(r["passed"] for r in report["checks"].values()):
            code = 1

    if stage == "report":
        t = time.perf_counter()
        paths.update(_write_tables(u, report, ctx, out))
        paths.update(_write_figures(u, report, ctx, out))
        timing["report"] = time.perf_counter() - t

    report["passed"] = code == 0
    report["timing"] = timing
    report["paths"] = paths
    _finish(report, out)
    return report, code


def _finish(report, out):
    report["report_hash"] = report_hash(report)
    with open(Path(out) / "report.json", "w") as fh:
        json.dump(_clean(report), fh, indent=2, sort_keys=True)


def _write_tables(u, report, ctx, out):
    paths = {}
    en = report.get("solve", {}).get("energies")
    if en:
        f = out / "energies.csv"
        write_table_csv(f, ["sweep", "energy"], [(i, e) for i, e in enumerate(en)])
        paths["energies_csv"] = str(f)
    f = out / "energy_density.csv"
    write_field_csv(f, pullback_trace(u), "grad_sq")
    paths["field_csv"] = str(f)
    if "holder" in ctx:
        f = out / "holder.csv"
        rows = []
        for fit in ctx["holder"]:
            for r, o in zip(fit.radii, fit.oscillation):
                rows.append(tuple(fit.center) + (r, o))
        write_table_csv(f, [f"c{i + 1}" for i in range(u.grid.dim)] + ["radius", "oscillation"], rows)
        paths["holder_csv"] = str(f)
    if "gehring" in ctx:
        g = ctx["gehring"]
        f = out / "gehring.csv"
        write_table_csv(f, ["p", "p_mean", "rhs"], list(zip(g.exponents, g.p_means, g.rhs)))
        paths["gehring_csv"] = str(f)
    return paths


def _write_figures(u, report, ctx, out):
    from . import plotting

    paths = {}
    en = report.get("solve", {}).get("energies")
    if en and len(en) > 1:
        paths["fig_energy"] = plotting.energy_history(en, out / "energy_history.png")
    fig = plotting.field_image(pullback_trace(u), out / "energy_density.png", "|grad u|^2")
    if fig:
        paths["fig_density"] = fig
    if "holder" in ctx:
        paths["fig_holder"] = plotting.holder_fits(ctx["holder"], out / "holder.png")
    if "gehring" in ctx:
        paths["fig_gehring"] = plotting.gehring_curve(ctx["gehring"], out / "gehring.png")
    return paths


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    ap = argparse.ArgumentParser(prog="npcharm", description="Discrete harmonic maps into NPC targets.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, hlp in (
        ("solve", "solve the Dirichlet problem and dump the map"),
        ("check", "solve (or load a map) and run the requested checks"),
        ("report", "run checks and write CSV tables and PNG figures"),
    ):
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("--config", required=True, help="experiment YAML file")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--seed", type=int, help="random seed (overrides config)")
        sp.add_argument("--threads", type=int, help=f"worker threads for checks (env {THREADS_ENV})")
        if name != "solve":
            sp.add_argument("--map", dest="map_path", help="use a saved map instead of solving")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        rep, code = run(cfg, args.command, args.out, args.seed, args.threads, getattr(args, "map_path", None))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NPCError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    status = "PASS" if code == 0 else "FAIL"
    for name, res in rep.get("checks", {}).items():
        print(f"{name:14s} {'pass' if res['passed'] else 'FAIL'}")
    print(f"{status} report_hash={rep['report_hash']}")
    return code


if __name__ == "__main__":
    sys.exit(main())
