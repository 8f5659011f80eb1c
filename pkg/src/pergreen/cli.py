"""Command-line front end: ``pergreen <command> --config run.yaml --out DIR``.

Commands: correctors, green, decompose, estimate, shells.  Each run writes
its data files plus ``manifest.json`` (resolved config, residuals, wall time,
version) into the output directory.  Exit codes: 0 success, 2 configuration
or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cells import HomogenizationError, HomogenizedTensor, correctors, homogenize
from .coeff_fields import FieldError
from .config import ConfigError, RunConfig, load_config
from .decomposition import (HTermContext, ProvenanceError, compare_with_direct, decompose)
from .estimates import (FitError, decay_fit, green_family, log_bound_check_2d,
                        sup_relative_gap, uniformity_from_family, write_fit_csv, write_summary)
from .green import (DomainError, MemoryGuardError, derivative_tables, green_2d_from_3d,
                    periodic_green, periodic_green_many)
from .shells import ShellError, shell_decay_certificate, write_certificate
from .torus import (ConvergenceError, GridFunction, ResolutionError, TorusGrid, iteration_cap,
                    write_gsgf)

log = logging.getLogger("pergreen")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
CONFIG_ERRORS = (ConfigError, FieldError, DomainError, ResolutionError, ShellError,
                 ProvenanceError, MemoryGuardError, FitError)
NUMERIC_ERRORS = (ConvergenceError, HomogenizationError, FloatingPointError,
                  np.linalg.LinAlgError)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _tensor_for(cfg: RunConfig, field_, residuals: dict) -> HomogenizedTensor:
    """Homogenized tensor of the field (exact for constant fields)."""
    if field_.is_constant:
        return HomogenizedTensor.from_matrix(field_.mean_matrix(samples=1))
    cs = correctors(field_, TorusGrid(cfg.d, cfg.N), cfg.solver.tol)
    residuals.update({f"corrector_{k}": v for k, v in cs.residuals.items()})
    return homogenize(cs)


def cmd_correctors(cfg: RunConfig, out: Path, jobs: int) -> dict:
    f = cfg.make_field()
    grid = TorusGrid(cfg.d, cfg.N)
    cs = correctors(f, grid, cfg.solver.tol)
    T = homogenize(cs)
    files = []
    for i, w in enumerate(cs.w):
        p = out / f"w_{i}.gsgf"
        write_gsgf(p, GridFunction(grid, w))
        files.append(p.name)
    if cs.w_dagger is not cs.w:
        for i, w in enumerate(cs.w_dagger):
            p = out / f"w_dagger_{i}.gsgf"
            write_gsgf(p, GridFunction(grid, w))
            files.append(p.name)
    (out / "homogenized.json").write_text(_json(T.to_json()))
    files.append("homogenized.json")
    return {"files": files, "residuals": dict(cs.residuals), "results": T.to_json()}


def cmd_green(cfg: RunConfig, out: Path, jobs: int) -> dict:
    f = cfg.make_field()
    grid = TorusGrid(cfg.d, cfg.N)
    sources = cfg.green.sources or [[0.0] * cfg.d]
    files, residuals, results = [], {}, {}
    for n in cfg.n:
        tabs = periodic_green_many(f, n, grid, sources, cfg.solver.tol, jobs)
        mean_check = []
        for i, t in enumerate(tabs):
            stem = f"green_n{n}_s{i}"
            t.save(out / f"{stem}.gsgf")
            files += [f"{stem}.gsgf", f"{stem}.json"]
            residuals[stem] = t.residual
            mean_check.append(abs(t.values.mean()) / np.abs(t.values).max())
        entry = {"mean_zero": max(mean_check)}
        if f.is_symmetric and len(tabs) > 1:
            # G(y_i, y_j) = G(y_j, y_i) at the snapped source nodes
            err = 0.0
            for i in range(len(tabs)):
                for j in range(i):
                    a = tabs[j].node_value(tabs[i].y)
                    b = tabs[i].node_value(tabs[j].y)
                    err = max(err, abs(a - b) / max(abs(a), abs(b), 1e-300))
            entry["reciprocity"] = err
        if cfg.green.derivatives:
            tabs_d = derivative_tables(f, n, grid, sources[0], cfg.solver.tol, jobs)
            name = f"derivatives_n{n}.npz"
            np.savez(out / name, **{k: v for k, v in tabs_d.items() if k != "residual"})
            files.append(name)
            residuals[f"derivatives_n{n}"] = tabs_d["residual"]
        results[str(n)] = entry
    return {"files": files, "residuals": residuals, "results": results}


def cmd_decompose(cfg: RunConfig, out: Path, jobs: int) -> dict:
    dc = cfg.decompose
    if dc.x is None or dc.y is None:
        raise ConfigError("decompose needs x and y")
    f = cfg.make_field()
    residuals: dict = {}
    tensor = _tensor_for(cfg, f, residuals)
    n = cfg.n[0]
    x, y = np.asarray(dc.x), np.asarray(dc.y)
    if dc.source == "analytic":
        q = dc.quadrature
        ctx = HTermContext.analytic(tensor, q.order, q.depth, q.eta, field_=f)
    else:
        ctx = HTermContext.windowed(f, int(dc.L), float(dc.h), y, cfg.solver.tol, n)
        residuals["window"] = ctx.window.residual
    rep = decompose(ctx, x, y, dc.m_max, tensor)
    if dc.direct_check:
        direct = periodic_green(f, n, TorusGrid(cfg.d, cfg.N), rep.y, cfg.solver.tol)
        residuals["direct"] = direct.residual
        compare_with_direct(rep, direct)
    (out / "decomposition.json").write_text(_json(rep.to_json()))
    return {"files": ["decomposition.json"], "residuals": residuals,
            "results": {"S": rep.value, "beta_hat": rep.beta_hat, "rel_error": rep.rel_error}}


def cmd_estimate(cfg: RunConfig, out: Path, jobs: int) -> dict:
    es = cfg.estimate
    f = cfg.make_field()
    grid = TorusGrid(cfg.d, cfg.N)
    fam = green_family(f, grid, cfg.n, es.source, cfg.solver.tol, jobs)
    r_min, r_max = es.window
    r_max = 0.25 if r_max is None else float(r_max)
    fits = [decay_fit(fam, q, r_min, r_max) for q in es.quantities]
    reports = [uniformity_from_family(fam, q, r_min, r_max) for q in es.quantities]
    write_fit_csv(fits, out / "fits.csv")
    write_summary(fits, reports, out / "summary.json")
    results = {q: {"p_hat": fit.p_pooled, "spread": rep.spread,
                   "spread_ok": rep.spread <= es.spread_threshold}
               for q, fit, rep in zip(es.quantities, fits, reports)}
    files = ["fits.csv", "summary.json"]
    if cfg.d == 2:
        tab = periodic_green(f, cfg.n[0], grid, fam.y, cfg.solver.tol)
        lb = log_bound_check_2d(tab)
        via3 = green_2d_from_3d(f, grid, fam.y, tol=cfg.solver.tol, n=cfg.n[0])
        results["log_bound"] = {"C_max": lb.C_max, "C_ls": lb.C_ls,
                                "gap_3d": sup_relative_gap(via3, tab)}
    residuals = {f"n{n}": fam.tables[n]["residual"] for n in fam.n_list}
    return {"files": files, "residuals": residuals, "results": results}


def cmd_shells(cfg: RunConfig, out: Path, jobs: int) -> dict:
    sh = cfg.shells
    residuals: dict = {}
    if sh.tensor is not None:
        tensor = HomogenizedTensor.from_matrix(np.asarray(sh.tensor, dtype=float))
    else:
        tensor = _tensor_for(cfg, cfg.make_field(), residuals)
    rows = shell_decay_certificate(tensor, sh.m_max, sh.m_min)
    write_certificate(rows, out / "certificate.csv")
    results = {"A_star_sym": tensor.A_star_sym,
               "rows": [{"m": r.m, "count": r.count, "norm": r.norm, "abs_sum": r.abs_sum,
                         "ratio": r.ratio} for r in rows]}
    return {"files": ["certificate.csv"], "residuals": residuals, "results": results}


COMMANDS = {"correctors": cmd_correctors, "green": cmd_green, "decompose": cmd_decompose,
            "estimate": cmd_estimate, "shells": cmd_shells}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pergreen", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--out", type=Path, default=Path("out"))
        s.add_argument("--jobs", type=int, default=1)
        s.add_argument("--verbose", "-v", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg = load_config(args.config)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        manifest = {"command": args.command, "version": __version__, "config": None,
                    "config_path": str(args.config), "status": "config_error",
                    "error": str(exc), "wall_time": time.perf_counter() - t0}
        (out / "manifest.json").write_text(_json(manifest))
        return EXIT_CONFIG
    manifest = {"command": args.command, "version": __version__, "config": cfg.resolved(),
                "config_path": str(args.config.resolve()), "jobs": args.jobs}
    code = EXIT_OK
    try:
        log.info("running %s", args.command)
        with iteration_cap(cfg.solver.max_iter):
            res = COMMANDS[args.command](cfg, out, args.jobs)
        manifest.update(res)
        manifest["status"] = "ok"
    except CONFIG_ERRORS as exc:
        code = EXIT_CONFIG
        manifest.update(status="config_error", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
    except NUMERIC_ERRORS as exc:
        code = EXIT_NUMERIC
        manifest.update(status="numerical_failure", error=str(exc))
        print(f"numerical failure: {exc}", file=sys.stderr)
    manifest["wall_time"] = time.perf_counter() - t0
    (out / "manifest.json").write_text(_json(manifest))
    return code


if __name__ == "__main__":
    sys.exit(main())
