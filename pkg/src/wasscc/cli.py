"""``wasscc`` command-line entry point.

    wasscc {coeff,watershed,portfolio,envelope,solve-pp,certify} -c CONFIG -o OUT [--set section.key=value]...

Exit status: 0 success, 1 usage or config error, 2 infeasible / unreachable /
failed certificate. Every run also writes ``OUT.meta`` (JSON) with the
resolved parameters and seed.
"""

import argparse
import csv
import json
import logging
import sys

import numpy as np

from . import __version__
from ._jit import USE_NUMBA
from .config import ConfigError, build_portfolio, build_production, parse_config

log = logging.getLogger("wasscc")

COMMANDS = ("coeff", "watershed", "portfolio", "envelope", "solve-pp", "certify")


class Infeasible(Exception):
    """Maps to exit status 2."""


def _cmd_coeff(cfg, out):
    from .coeff import c_opt, c_pess, nominal_coefficient

    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsi", "delta", "c_pess", "c_opt", "nominal"])
        for eps in cfg.get("coeff", "epsilon"):
            for delta in cfg.get("coeff", "delta"):
                cp = c_pess(float(eps), float(delta)).c if eps <= 0.5 else float("nan")
                co = c_opt(float(eps), float(delta)).c
                w.writerow([f"{eps:.9g}", f"{delta:.9g}", f"{cp:.12g}", f"{co:.12g}", f"{nominal_coefficient(float(eps)):.12g}"])
    return {}


def _cmd_watershed(cfg, out):
    from .coeff import watershed_sweep, write_watershed_csv

    lo, hi = cfg.get("watershed", "eps_min"), cfg.get("watershed", "eps_max")
    if not lo < hi:
        raise ConfigError(["watershed.eps_min must be below watershed.eps_max"])
    grid = np.linspace(lo, hi, cfg.get("watershed", "points"))
    pts = watershed_sweep(grid, verify=cfg.get("watershed", "verify"))
    write_watershed_csv(pts, out)
    return {"points": len(pts)}


def _cmd_portfolio(cfg, out):
    from .individual import InfeasibleError, NonConvexError, solve_portfolio, write_allocation_csv

    inst = build_portfolio(cfg)
    try:
        sol = solve_portfolio(
            inst, cfg.get("portfolio", "mode"), cfg.get("portfolio", "tol"), cfg.get("portfolio", "allow_nonconvex")
        )
    except InfeasibleError as exc:
        raise Infeasible(str(exc)) from exc
    except NonConvexError as exc:
        raise ConfigError([str(exc)]) from exc
    write_allocation_csv(sol.x, out)
    return {
        "columns": inst.labels,
        "objective": sol.objective,
        "margin": sol.margin,
        "coefficient": sol.coefficient,
        "status": sol.status,
        "kkt_residual": sol.diagnostics.get("kkt_residual"),
    }


def _budget_grid(cfg, inst):
    budgets = cfg.get("envelope", "budgets")
    if budgets is not None:
        return budgets
    hi = cfg.get("envelope", "budget_max")
    if np.isnan(hi):
        hi = inst.max_budget
    return np.linspace(cfg.get("envelope", "budget_min"), hi, cfg.get("envelope", "points"))


def _cmd_envelope(cfg, out):
    from .joint import envelope_sweep, write_envelope_csv

    inst = build_production(cfg)
    rows = envelope_sweep(inst, _budget_grid(cfg, inst))
    write_envelope_csv(rows, out)
    return {"points": len(rows)}


def _cmd_solve_pp(cfg, out):
    from .joint import UnreachableError, min_cost

    inst = build_production(cfg)
    if not inst.amb.delta > 0:
        raise ConfigError(["solve-pp needs production.delta > 0"])
    try:
        res = min_cost(inst)
    except UnreachableError as exc:
        raise Infeasible(str(exc)) from exc
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["budget", "radius"] + [f"x{j + 1}" for j in range(inst.n)])
        w.writerow([f"{res.budget:.12g}", f"{res.rho:.12g}"] + [f"{v:.12g}" for v in res.x])
    return {"budget": res.budget, "rho": res.rho, "bca_runs": res.evaluations}


def _cmd_certify(cfg, out):
    from .certify import certify
    from .individual import read_allocation_csv

    kind = cfg.get("certify", "instance")
    inst = build_portfolio(cfg) if kind == "portfolio" else build_production(cfg)
    x = cfg.get("certify", "x")
    path = cfg.get("certify", "allocation")
    if path:
        try:
            x = read_allocation_csv(path)
        except (OSError, ValueError) as exc:
            raise ConfigError([f"certify.allocation: {exc}"]) from exc
    if x is None:
        raise ConfigError(["certify needs certify.x or certify.allocation"])
    n = inst.n_assets if kind == "portfolio" else inst.n
    if x.size != n:
        raise ConfigError([f"certify: decision has {x.size} entries, instance expects {n}"])
    cert = certify(inst, x, cfg.get("certify", "mode"), cfg.get("certify", "n_samples"), cfg.get("run", "seed"))
    with open(out, "w") as fh:
        fh.write(cert.to_record() + "\n")
    if cert.verdict == "fail":
        raise Infeasible(f"certificate failed: {cert.to_record()}")
    return {"verdict": cert.verdict}


HANDLERS = {
    "coeff": _cmd_coeff,
    "watershed": _cmd_watershed,
    "portfolio": _cmd_portfolio,
    "envelope": _cmd_envelope,
    "solve-pp": _cmd_solve_pp,
    "certify": _cmd_certify,
}


def _write_meta(out, command, config_path, overrides, cfg, status, extra):
    meta = {
        "command": command,
        "config": config_path,
        "overrides": list(overrides),
        "seed": cfg.get("run", "seed") if cfg else None,
        "parameters": cfg.resolved() if cfg else None,
        "status": status,
        "result": extra,
        "version": __version__,
        "jit": USE_NUMBA,
    }
    with open(out + ".meta", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def build_parser():
    p = argparse.ArgumentParser(prog="wasscc", description="Wasserstein robust chance constraint tools")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("-c", "--config", required=True, help="instance/config file")
    p.add_argument("-o", "--output", required=True, help="output file (a .meta sidecar is written next to it)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cfg = None
    try:
        with open(args.config) as fh:
            text = fh.read()
        cfg = parse_config(text, args.overrides)
        extra = HANDLERS[args.command](cfg, args.output)
    except OSError as exc:
        print(f"wasscc: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        for e in exc.errors:
            print(f"wasscc: {e}", file=sys.stderr)
        _write_meta(args.output, args.command, args.config, args.overrides, cfg, "error", {"errors": exc.errors})
        return 1
    except Infeasible as exc:
        print(f"wasscc: infeasible: {exc}", file=sys.stderr)
        _write_meta(args.output, args.command, args.config, args.overrides, cfg, "infeasible", {"message": str(exc)})
        return 2
    _write_meta(args.output, args.command, args.config, args.overrides, cfg, "ok", extra)
    log.info("wrote %s", args.output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
