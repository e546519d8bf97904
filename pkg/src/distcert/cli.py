"""
Command-line front end.

Every subcommand takes the problem class as ``--kappa`` (meaning m = 1,
L = kappa) or as ``--m`` and ``--L``, plus ``--sigma``. Results go to
stdout, or to ``--out`` when given.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time

import numpy as np

from .adversary import NoLaplacianError, reconstruct_laplacian, worst_trajectory
from .algorithms import CATALOG_NAMES, CatalogError, RealizationError, catalog, canonical_name, load_realization
from .certify import InvalidAlgorithmError, ProblemClass, UncertifiableError, certify_rate
from .sdp import SolverError
from .simulate import (BadInitializationError, InsufficientDataError, LaplacianSequence, NotImplementableError,
                       canonical_initialization, empirical_rate, random_quadratics, run)
from .svl import DesignInfeasibleError, NumericError, SingularityError, design
from .tuning import UncertifiableEverywhereError, curves_to_csv, rate_curve, tune_alpha, tune_alpha_mu

EXIT_OK, EXIT_CONFIG, EXIT_UNCERTIFIABLE, EXIT_NUMERIC = 0, 1, 2, 3

EPILOG = """\
exit codes:
  0  success
  1  bad configuration (unknown algorithm, malformed file, no fixed point, bad flags)
  2  uncertifiable or infeasible (no rate below the search ceiling, no SVL design,
     no Laplacian matching the signals)
  3  numerical failure (SDP solver breakdown, singular closed-form expression)
"""


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# argument parsing

def _float_list(text: str) -> list[float]:
    """Comma list "0.1,0.2" or linspace "start:stop:num"."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError("use start:stop:num")
        return [float(x) for x in np.linspace(float(parts[0]), float(parts[1]), int(parts[2]))]
    return [float(x) for x in text.split(",") if x.strip()]


def _nonneg_int(text: str) -> int:
    val = int(text)
    if val < 0:
        raise argparse.ArgumentTypeError("must be a nonnegative integer")
    return val


def _pos_int(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return val


def _problem_args(p: argparse.ArgumentParser, sigma: bool = True) -> None:
    g = p.add_argument_group("problem class")
    g.add_argument("--kappa", type=float, help="condition ratio; implies m = 1, L = kappa")
    g.add_argument("--m", type=float, help="strong convexity parameter")
    g.add_argument("--L", type=float, help="smoothness parameter")
    if sigma:
        g.add_argument("--sigma", type=float, required=True, help="graph gap bound in [0, 1)")


def _alg_args(p: argparse.ArgumentParser, multiple: bool = False) -> None:
    g = p.add_argument_group("algorithm")
    if multiple:
        g.add_argument("--alg", action="append",
                       help=f"catalog name, repeatable or comma separated (default: all of {', '.join(CATALOG_NAMES)})")
    else:
        src = g.add_mutually_exclusive_group(required=True)
        src.add_argument("--alg", help=f"catalog name: {', '.join(CATALOG_NAMES)}")
        src.add_argument("--alg-file", help="algorithm definition JSON")
        g.add_argument("--alpha", type=float, help="stepsize (required for catalog algorithms other than SVL)")
        g.add_argument("--mu", type=float, default=None, help="overrelaxation parameter (default 1)")


def _output_args(p: argparse.ArgumentParser, formats=("csv", "json"), default="json") -> None:
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--format", choices=formats, default=default, help=f"output format (default {default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distcert", description=__doc__.strip().splitlines()[0],
                                     epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    fmt = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("certify", help="smallest certified rate by LMI bisection", epilog=EPILOG, formatter_class=fmt)
    _alg_args(p)
    _problem_args(p)
    p.add_argument("--tol", type=float, default=1e-6, help="bisection width (default 1e-6)")
    p.add_argument("--eps", type=float, default=1e-6, help="definiteness margin (default 1e-6)")
    p.add_argument("--out", help="write the certificate JSON here")

    p = sub.add_parser("design-svl", help="SVL parameters and rate", epilog=EPILOG, formatter_class=fmt)
    _problem_args(p)
    p.add_argument("--eps", type=float, default=1e-9, help="bisection width on rho (default 1e-9)")
    p.add_argument("--out", help="write the design JSON here")

    p = sub.add_parser("tune", help="tune alpha (and mu) against the certified rate", epilog=EPILOG,
                       formatter_class=fmt)
    p.add_argument("--alg", required=True, help=f"catalog name: {', '.join(CATALOG_NAMES)}")
    _problem_args(p)
    p.add_argument("--mu", type=float, help="hold mu fixed and tune alpha only (default: tune both)")
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--out", help="write the result JSON here")

    p = sub.add_parser("rate-curve", help="tuned certified rate versus sigma (CSV)", epilog=EPILOG,
                       formatter_class=fmt)
    _alg_args(p, multiple=True)
    _problem_args(p, sigma=False)
    p.add_argument("--sigma-grid", type=_float_list, required=True,
                   help='comma list "0.1,0.5" or linspace "start:stop:num"')
    p.add_argument("--alpha-only", action="store_true", help="tune alpha with mu = 1 instead of (alpha, mu)")
    p.add_argument("--workers", type=_pos_int, default=1, help="worker processes (default 1)")
    p.add_argument("--out", help="output CSV (default: stdout)")

    p = sub.add_parser("simulate", help="run an algorithm on random quadratics", epilog=EPILOG,
                       formatter_class=fmt)
    _alg_args(p)
    _problem_args(p)
    p.add_argument("--n", type=_pos_int, default=5, help="agents (default 5)")
    p.add_argument("--d", type=_pos_int, default=1, help="dimension (default 1)")
    p.add_argument("--iters", type=_pos_int, default=100, help="iterations K (default 100)")
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--constant-graph", action="store_true", help="reuse one Laplacian for every step")
    _output_args(p, default="csv")

    p = sub.add_parser("worst-case", help="greedy adversarial trajectory", epilog=EPILOG, formatter_class=fmt)
    _alg_args(p)
    _problem_args(p)
    p.add_argument("--n", type=_pos_int, default=2, help="agents (default 2)")
    p.add_argument("--d", type=_pos_int, default=2, help="dimension (default 2)")
    p.add_argument("--iters", type=_pos_int, default=61, help="iterations K (default 61)")
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--restarts", type=_pos_int, default=8, help="random starts per step (default 8)")
    p.add_argument("--tol", type=float, default=1e-6, help="bisection width for the certificate")
    p.add_argument("--reconstruct", action="store_true", help="fit a Laplacian to every step")
    _output_args(p, default="csv")

    p = sub.add_parser("reconstruct-laplacian", help="balanced Laplacian mapping z to v", epilog=EPILOG,
                       formatter_class=fmt)
    p.add_argument("--input", required=True, help='JSON file with "z" and "v" arrays (n rows each)')
    p.add_argument("--sigma", type=float, help="report whether the achieved norm is within sigma")
    p.add_argument("--out", help="write the result JSON here")
    return parser


# ---------------------------------------------------------------------------
# helpers

def problem_class(args) -> ProblemClass:
    sigma = getattr(args, "sigma", None)
    sigma = 0.0 if sigma is None else sigma
    if not 0 <= sigma < 1:
        raise ConfigError("--sigma must lie in [0, 1)")
    if args.kappa is not None:
        if args.m is not None or args.L is not None:
            raise ConfigError("give either --kappa or --m/--L, not both")
        if args.kappa < 1:
            raise ConfigError("--kappa must be at least 1")
        return ProblemClass(1.0, float(args.kappa), sigma)
    if args.m is None or args.L is None:
        raise ConfigError("give --kappa or both --m and --L")
    if not 0 < args.m <= args.L:
        raise ConfigError("need 0 < m <= L")
    return ProblemClass(float(args.m), float(args.L), sigma)


def resolve_algorithm(args, pc: ProblemClass):
    """Realization from --alg-file, or the catalog (SVL is designed for pc)."""
    if getattr(args, "alg_file", None):
        return load_realization(args.alg_file)
    name = canonical_name(args.alg)
    if name == "SVL":
        return design(pc).realization()
    if args.alpha is None:
        raise ConfigError(f"{name} needs --alpha (the tune command finds one)")
    mu = 1.0 if args.mu is None else args.mu
    return catalog(name, args.alpha, mu, m=pc.m, L=pc.L)


def _emit(text: str, path=None) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, default=_to_builtin)


def _to_builtin(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


# ---------------------------------------------------------------------------
# commands

def cmd_certify(args) -> int:
    pc = problem_class(args)
    r = resolve_algorithm(args, pc)
    t0 = time.perf_counter()
    rho, cert = certify_rate(r, pc, tol=args.tol, eps=args.eps)
    wall = time.perf_counter() - t0
    _emit(_json({"algorithm": r.name, "rho": rho, "margins": cert.margins, "wall_time": wall}))
    if args.out:
        _emit(cert.to_json(indent=2), args.out)
    if rho > 1:
        print(f"note: certified rate {rho:.6g} exceeds 1 (no convergence guarantee)", file=sys.stderr)
    return EXIT_OK


def cmd_design_svl(args) -> int:
    pc = problem_class(args)
    d = design(pc, eps=args.eps)
    _emit(_json(d.to_dict()), args.out)
    return EXIT_OK


def cmd_tune(args) -> int:
    pc = problem_class(args)
    if args.mu is not None:
        res = tune_alpha(args.alg, pc, mu=args.mu)
    else:
        res = tune_alpha_mu(args.alg, pc, seed=args.seed)
    _emit(_json({"algorithm": canonical_name(args.alg), "kappa": pc.kappa, "sigma": pc.sigma,
                 "alpha": res.alpha, "mu": res.mu, "rho": res.rho, "evaluations": res.evaluations}), args.out)
    return EXIT_OK


def cmd_rate_curve(args) -> int:
    pc = problem_class(args)
    names = []
    for item in args.alg or [",".join(CATALOG_NAMES)]:
        names += [canonical_name(x.strip()) for x in item.split(",") if x.strip()]
    curves = rate_curve(names, pc.kappa, args.sigma_grid, tune_mu=not args.alpha_only,
                        workers=args.workers, m=pc.m)
    _emit(curves_to_csv(curves), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    pc = problem_class(args)
    r = resolve_algorithm(args, pc)
    rng = np.random.default_rng(args.seed)
    funcs = random_quadratics(args.n, args.d, pc.m, pc.L, seed=rng)
    laps = LaplacianSequence.random(args.n, pc.sigma, args.iters, seed=rng, constant=args.constant_graph)
    x0 = rng.standard_normal((args.n, args.d))
    init = canonical_initialization(r, funcs, x0, laps[0])
    traj = run(r, funcs, laps, args.iters, init)
    try:
        rate = empirical_rate(traj, burn_in=min(10, args.iters // 4))
    except InsufficientDataError:
        rate = math.nan
    traj.metadata.update({"seed": args.seed, "sigma": pc.sigma, "m": pc.m, "L": pc.L,
                          "constant_graph": args.constant_graph, "empirical_rate": rate})
    if args.format == "json":
        _emit(traj.metadata_json(indent=2, default=_to_builtin), args.out)
    else:
        _emit(traj.to_csv(), args.out)
    print(f"empirical rate {rate:.6g}", file=sys.stderr)
    return EXIT_OK


WORST_CASE_HEADER = ["k", "||x_err||", "V", "increment", "relative_increment", "sector_min", "graph_min",
                     "achieved_norm"]


def cmd_worst_case(args) -> int:
    pc = problem_class(args)
    r = resolve_algorithm(args, pc)
    rho, cert = certify_rate(r, pc, tol=args.tol)
    res = worst_trajectory(r, pc, cert, args.n, args.d, args.iters, seed=args.seed,
                           restarts=args.restarts, reconstruct=args.reconstruct)
    norms = res.trajectory.x_err_norms()
    burn = min(20, len(norms) // 3)
    try:
        rate = empirical_rate(norms, burn_in=burn)
    except InsufficientDataError:
        rate = math.nan
    summary = {"algorithm": r.name, "certified_rho": rho, "empirical_rate": rate, "burn_in": burn,
               "max_increment": float(res.increments.max(initial=-np.inf)), "n": args.n, "d": args.d,
               "seed": args.seed}
    if args.format == "json":
        _emit(_json({"summary": summary, "steps": res.steps}), args.out)
    else:
        lines = [",".join(WORST_CASE_HEADER)]
        for st in res.steps:
            k = st["k"]
            an = st.get("achieved_norm")
            lines.append(",".join([str(k), f"{norms[k]:.12e}", f"{res.V[k]:.12e}", f"{st['increment']:.6e}",
                                   f"{st['relative_increment']:.6e}", f"{st['sector_min']:.3e}",
                                   f"{st['graph_min']:.3e}", "" if an is None else f"{an:.10f}"]))
        _emit("\n".join(lines), args.out)
    print(_json(summary), file=sys.stderr)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    with open(args.input) as fh:
        data = json.load(fh)
    if "z" not in data or "v" not in data:
        raise ConfigError('input JSON needs "z" and "v"')
    z = np.asarray(data["z"], dtype=float)
    v = np.asarray(data["v"], dtype=float)
    if z.shape != v.shape or z.ndim < 1:
        raise ConfigError("z and v must have the same shape with one row per agent")
    n = z.shape[0]
    d = int(np.prod(z.shape[1:])) if z.ndim > 1 else 1
    Lk, nrm = reconstruct_laplacian(z, v, n, d, args.sigma)
    out = {"laplacian": Lk, "achieved_norm": nrm}
    if args.sigma is not None:
        out["within_sigma"] = bool(nrm <= args.sigma + 1e-4)
    _emit(_json(out), args.out)
    return EXIT_OK


COMMANDS = {
    "certify": cmd_certify,
    "design-svl": cmd_design_svl,
    "tune": cmd_tune,
    "rate-curve": cmd_rate_curve,
    "simulate": cmd_simulate,
    "worst-case": cmd_worst_case,
    "reconstruct-laplacian": cmd_reconstruct,
}

CONFIG_ERRORS = (ConfigError, CatalogError, RealizationError, InvalidAlgorithmError, NotImplementableError,
                 BadInitializationError, OSError, json.JSONDecodeError, ValueError)
UNCERTIFIABLE_ERRORS = (UncertifiableError, UncertifiableEverywhereError, DesignInfeasibleError, NoLaplacianError)
NUMERIC_ERRORS = (SolverError, NumericError, SingularityError, np.linalg.LinAlgError, FloatingPointError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UNCERTIFIABLE_ERRORS as exc:
        print(f"uncertifiable: {exc}", file=sys.stderr)
        return EXIT_UNCERTIFIABLE
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
