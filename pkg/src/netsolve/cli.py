"""Command-line interface.

Subcommands: ``generate`` (build a network file), ``analyze`` (audit the
assumptions of a network file), ``solve`` (one configured solve on a
network file), ``experiment`` (full YAML-driven run).

Exit codes: 0 on success, 2 when an assumption check fails (including
audit scans that find violating boxes), 1 for any other handled error.
``NETSOLVE_THREADS`` sets the analyzer thread count; outputs do not
depend on it.
"""

from __future__ import annotations

import argparse
import copy
import os
import sys

from .audit import poincare_slope
from .errors import AssumptionViolation, ConfigError, NetsolveError
from .experiments import (_DEFAULTS, _experiment_operator_and_data,
                          _save_solution, _solver_stack, _tracked_solve,
                          run_experiment, run_network_analysis,
                          write_manifest, write_solve_csv)
from .generate import generate_fiber_network, grid_network
from .netfile import read_network, write_network
from .network import all_faces, parse_face_token


def _threads() -> int:
    raw = os.environ.get("NETSOLVE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"NETSOLVE_THREADS must be an integer, got {raw!r}")


def _parse_faces(text: str | None):
    if text is None or text == "none":
        return ()
    if text == "all":
        return all_faces(2)
    try:
        return tuple(parse_face_token(t) for t in text.split(","))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}")


# ----------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    if args.grid is not None:
        net = grid_network(args.grid, _parse_faces(args.dirichlet))
        stats = {"source": "grid", "nodes": net.nnodes, "edges": net.nedges,
                 "total_edge_length": net.total_edge_length}
    else:
        net, stats = generate_fiber_network(
            seed=args.seed, kind=args.kind, fiber_length=args.fiber_length,
            density=args.density, concentration=args.concentration,
            strip_sigma=args.strip_sigma, merge_tol=args.merge_tol,
            dirichlet_faces=_parse_faces(args.dirichlet))
    write_network(net, args.output, decimal=args.decimal)
    for key, value in stats.items():
        print(f"{key}: {value}")
    print(f"written: {args.output}")
    return 0


def cmd_analyze(args) -> int:
    net = read_network(args.network)
    manifest = run_network_analysis(
        net, _parse_int_list(args.divisions), args.output,
        margin=args.margin, tol=args.eig_tol, maxiter=args.eig_maxiter,
        threads=_threads())
    bad = []
    for row in manifest["per_grid"]:
        print(f"grid {row['grid']}: sigma_hat={row['sigma_hat']:.6g} "
              f"rho_hat={row['rho_hat']:.6g} mu_hat={row['mu_hat']:.6g}")
        if row["violations"] or row["empty_boxes"]:
            bad.append(row["grid"])
    print(f"poincare slope: {manifest['poincare_slope']:.4g}")
    if bad:
        raise AssumptionViolation(
            f"audit found violating boxes at grids {bad}; see "
            f"{os.path.join(args.output, 'analysis.csv')}")
    return 0


def cmd_solve(args) -> int:
    net = read_network(args.network)
    if args.dirichlet is not None:
        net = net.with_dirichlet_faces(_parse_faces(args.dirichlet))
    cfg = copy.deepcopy(_DEFAULTS)
    cfg["experiment"] = args.model
    cfg["seed"] = args.seed
    cfg["solver"]["tol"] = args.tol
    cfg["solver"]["maxiter"] = args.maxiter
    cfg["solver"]["halo"] = args.halo
    cfg["solver"]["track_reference"] = not args.no_reference
    if args.conductivity is not None:
        cfg["heat"]["conductivity"] = args.conductivity

    op, load, lifted = _experiment_operator_and_data(cfg, net)
    mesh, _, precond = _solver_stack(op, args.mesh_intervals, cfg["solver"])
    result, ref_info = _tracked_solve(op, precond, load, lifted, cfg["solver"])

    os.makedirs(args.output, exist_ok=True)
    outputs = {}
    name = f"solve_m{args.mesh_intervals}.csv"
    outputs[name] = write_solve_csv(os.path.join(args.output, name), result)
    sol_name, sol_hash = _save_solution(args.output,
                                        f"m{args.mesh_intervals}",
                                        op.expand(result.solution, lifted))
    outputs[sol_name] = sol_hash
    write_manifest(args.output, {
        "schema": 1,
        "kind": "solve",
        "model": args.model,
        "network": {"path": args.network, "nodes": net.nnodes,
                    "edges": net.nedges},
        "mesh": mesh.describe(),
        "iterations": result.iterations,
        "converged": result.converged,
        "tau_mean": result.tau_mean,
        "tau_max": result.tau_max,
        "reference": ref_info["method"],
        "outputs": outputs,
    })
    print(f"iterations: {result.iterations} converged: {result.converged}")
    if result.tau_mean is not None:
        print(f"tau_mean: {result.tau_mean:.4f} tau_max: {result.tau_max:.4f}")
    print(f"outputs in: {args.output}")
    return 0


def cmd_experiment(args) -> int:
    manifest = run_experiment(args.config, args.output, threads=_threads())
    for solve in manifest["solves"]:
        line = (f"mesh 1/{solve['mesh_intervals']}: "
                f"iterations={solve['iterations']}")
        if solve["tau_mean"] is not None:
            line += (f" tau_mean={solve['tau_mean']:.4f}"
                     f" tau_max={solve['tau_max']:.4f}")
        print(line)
    for row in manifest.get("cd_rows", []):
        print(f"grid {row['grid']}: sigma_hat={row['sigma_hat']:.4g} "
              f"mu_hat={row['mu_hat']:.4g} cd_hat={row['cd_hat']:.4g}")
    print(f"outputs in: {args.output}")
    return 0


# ----------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netsolve",
        description="Elliptic solvers and assumption audits for spatial "
                    "networks")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a network file")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--grid", type=int, default=None,
                   help="make a regular grid with this many intervals "
                        "instead of a fiber network")
    g.add_argument("--kind", default="uniform",
                   choices=["uniform", "orient-bias", "place-bias"])
    g.add_argument("--fiber-length", type=float, default=0.05)
    g.add_argument("--density", type=float, default=1000.0)
    g.add_argument("--concentration", type=float, default=4.0)
    g.add_argument("--strip-sigma", type=float, default=0.1)
    g.add_argument("--merge-tol", type=float, default=None)
    g.add_argument("--dirichlet", default=None,
                   help="'all', 'none', or comma-separated face tokens "
                        "like xmin,xmax")
    g.add_argument("--decimal", action="store_true",
                   help="write decimal floats instead of hex")
    g.add_argument("--output", required=True)
    g.set_defaults(func=cmd_generate)

    a = sub.add_parser("analyze", help="audit network assumptions")
    a.add_argument("network")
    a.add_argument("--divisions", default="4,8,16,32",
                   help="comma-separated boxes-per-axis values")
    a.add_argument("--margin", type=float, default=None)
    a.add_argument("--eig-tol", type=float, default=1e-8)
    a.add_argument("--eig-maxiter", type=int, default=500)
    a.add_argument("--output", required=True)
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("solve", help="solve one model on a network file")
    s.add_argument("network")
    s.add_argument("--model", required=True,
                   choices=["heat", "tensile", "lateral"])
    s.add_argument("--mesh-intervals", type=int, default=8)
    s.add_argument("--halo", type=int, default=1)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--maxiter", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--conductivity", default=None,
                   choices=["uniform", "random"])
    s.add_argument("--dirichlet", default=None)
    s.add_argument("--no-reference", action="store_true",
                   help="skip the reference solve and error tracking")
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("experiment", help="run a YAML-configured experiment")
    e.add_argument("config")
    e.add_argument("--output", required=True)
    e.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AssumptionViolation as exc:
        print(f"assumption violation: {exc}", file=sys.stderr)
        return 2
    except NetsolveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
