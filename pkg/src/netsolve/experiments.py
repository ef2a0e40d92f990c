"""Reproducible experiment runners driven by YAML configs.

An experiment config is a YAML document with a ``schema: 1`` marker, an
``experiment`` kind, a ``seed``, and nested sections (``network``,
``solver``, ``heat``, ``structural``, ``analysis``). Unknown keys anywhere
are rejected outright; silently ignoring a typo would un-pin the run.

Experiments:

* ``heat``: conduction on the configured network with unit load, zero
  boundary values, and uniform or per-edge-random conductivity.
* ``tensile``: two-component fiber mechanics stretched along the first
  axis by a boundary strain.
* ``lateral``: three-component fiber mechanics with an out-of-plane body
  load and an in-plane boundary strain.
* ``cd-analysis``: the heat solve plus assumption scans at matching box
  partitions, combining measured contraction rates with the audited
  constants into the observed rate coefficient.

Every run writes CSV outputs (floats via repr, newline-terminated lines)
and a manifest.json carrying the config hash and a hash per output file;
nothing time-dependent is recorded, so a rerun of the same config is
byte-identical.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os

import numpy as np
import yaml

from .audit import connectivity_scan, homogeneity_scan, poincare_slope
from .boxmesh import BasisRestriction, BoxMesh
from .errors import ConfigError
from .generate import generate_fiber_network, grid_network
from .netfile import read_network
from .network import SpatialNetwork, all_faces, parse_face_token
from .operators import (StructuralParams, heat_operator, structural_operator)
from .schwarz import SchwarzPreconditioner, pcg, reference_solve

_DEFAULTS = {
    "schema": 1,
    "experiment": None,
    "seed": 0,
    "network": {
        "source": "grid",
        "intervals": 512,
        "kind": "uniform",
        "fiber_length": 0.05,
        "density": 1000.0,
        "concentration": 4.0,
        "strip_sigma": 0.1,
        "merge_tol": None,
        "path": None,
        "dirichlet": None,
    },
    "solver": {
        "mesh_intervals": [8],
        "halo": 1,
        "tol": 1.0e-8,
        "maxiter": 1000,
        "track_reference": True,
        "direct_limit": 600000,
        "connectivity_radius": None,
    },
    "heat": {
        "conductivity": "uniform",
    },
    "structural": {
        "components": 2,
        "wire_radius": 2.5e-3,
        "youngs_modulus": 210.0e9,
        "pair_policy": "all",
        "boundary_strain": 0.2,
        "lateral_factor": 0.1,
        "body_load": -1.0e3,
    },
    "analysis": {
        "divisions": [4, 8, 16, 32],
        "margin": None,
        "eig_tol": 1.0e-8,
        "eig_maxiter": 500,
    },
}

_EXPERIMENTS = ("heat", "tensile", "lateral", "cd-analysis")


def _merge_strict(defaults: dict, user: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + str(key)!r}")
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + str(key)!r} must be a "
                                  f"mapping")
            out[key] = _merge_strict(defaults[key], value, path + key + ".")
        else:
            out[key] = value
    return out


def load_config(path):
    """Load, validate, and normalize an experiment config.

    Returns (config dict, sha256 hex of the file bytes)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    data = yaml.safe_load(raw)
    if not isinstance(data, dict):
        raise ConfigError("config must be a YAML mapping")
    cfg = _merge_strict(_DEFAULTS, data)
    if cfg["schema"] != 1:
        raise ConfigError(f"unsupported config schema {cfg['schema']!r}")
    if cfg["experiment"] not in _EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {_EXPERIMENTS}")
    mi = cfg["solver"]["mesh_intervals"]
    cfg["solver"]["mesh_intervals"] = [int(m) for m in np.atleast_1d(mi)]
    dv = cfg["analysis"]["divisions"]
    cfg["analysis"]["divisions"] = [int(g) for g in np.atleast_1d(dv)]
    return cfg, hashlib.sha256(raw).hexdigest()


# ----------------------------------------------------------------------
# network construction


def _resolve_faces(dirichlet, source: str):
    if dirichlet is None:
        return all_faces(2) if source == "grid" else None
    if dirichlet == "all":
        return all_faces(2)
    if isinstance(dirichlet, (list, tuple)):
        return [parse_face_token(t) for t in dirichlet]
    raise ConfigError("network.dirichlet must be null, 'all', or a list of "
                      "face tokens")


def build_network(cfg: dict):
    """Build the configured network. Returns (network, stats dict)."""
    ncfg = cfg["network"]
    source = ncfg["source"]
    faces = _resolve_faces(ncfg["dirichlet"], source)
    if source == "grid":
        net = grid_network(int(ncfg["intervals"]),
                           faces if faces is not None else all_faces(2))
        stats = {"source": "grid", "intervals": int(ncfg["intervals"])}
    elif source == "fiber":
        net, stats = generate_fiber_network(
            seed=int(cfg["seed"]), kind=ncfg["kind"],
            fiber_length=float(ncfg["fiber_length"]),
            density=float(ncfg["density"]),
            concentration=float(ncfg["concentration"]),
            strip_sigma=float(ncfg["strip_sigma"]),
            merge_tol=ncfg["merge_tol"],
            dirichlet_faces=faces if faces is not None else ())
        stats = {"source": "fiber", **stats}
    elif source == "file":
        if not ncfg["path"]:
            raise ConfigError("network.source 'file' needs network.path")
        net = read_network(ncfg["path"])
        if faces is not None:
            net = net.with_dirichlet_faces(faces)
        stats = {"source": "file", "path": str(ncfg["path"])}
    else:
        raise ConfigError(f"unknown network source {source!r}")
    stats.update({"nodes": net.nnodes, "edges": net.nedges,
                  "total_edge_length": net.total_edge_length})
    return net, stats


# ----------------------------------------------------------------------
# rate arithmetic


def cd_estimate(tau_mean: float, sigma_hat: float, mu_hat: float) -> float:
    """Observed rate coefficient from a measured mean contraction and the
    audited homogeneity ratio and connectivity constant."""
    return (1.0 + tau_mean) / (np.sqrt(sigma_hat) * mu_hat * (1.0 - tau_mean))


def predicted_contraction(sigma_hat: float, mu_hat: float,
                          cd: float = 3.5) -> float:
    """Contraction rate implied by the theory for a given coefficient."""
    sqrt_kappa = cd * np.sqrt(sigma_hat) * mu_hat
    return (sqrt_kappa - 1.0) / (sqrt_kappa + 1.0)


# ----------------------------------------------------------------------
# output helpers


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return repr(x)


def _write_text(path: str, text: str) -> str:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_solve_csv(path: str, result) -> str:
    """Per-iteration record of a tracked solve; returns the file hash."""
    lines = ["iteration,residual,k_error,rate"]
    n = len(result.residual_norms)
    for k in range(n):
        err = (result.energy_errors[k]
               if result.energy_errors is not None else None)
        rate = (result.rates[k - 1]
                if result.rates is not None and k >= 1 else None)
        lines.append(f"{k},{_fmt(result.residual_norms[k])},"
                     f"{_fmt(err)},{_fmt(rate)}")
    return _write_text(path, "\n".join(lines) + "\n")


def write_analysis_csv(path: str, rows: list, dimension: int) -> str:
    centers = ",".join(f"center_{a}" for a in range(dimension))
    lines = [f"grid,box_index,{centers},mass_value,lambda1,lambda2,mu"]
    for grid, audit, mass_value in rows:
        center = ",".join(_fmt(c) for c in audit.center)
        lines.append(f"{grid},{audit.index},{center},{_fmt(mass_value)},"
                     f"{_fmt(audit.lambda1)},{_fmt(audit.lambda2)},"
                     f"{_fmt(audit.mu)}")
    return _write_text(path, "\n".join(lines) + "\n")


def write_manifest(outdir: str, manifest: dict) -> str:
    path = os.path.join(outdir, "manifest.json")
    text = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    _write_text(path, text)
    return path


def _save_solution(outdir: str, tag: str, solution: np.ndarray) -> tuple[str, str]:
    name = f"solution_{tag}.npy"
    path = os.path.join(outdir, name)
    with open(path, "wb") as fh:
        np.save(fh, solution)
    with open(path, "rb") as fh:
        return name, hashlib.sha256(fh.read()).hexdigest()


# ----------------------------------------------------------------------
# solve pipeline


def _solver_stack(op, mesh_intervals: int, solver_cfg: dict):
    spacing = float(op.net.domain[0]) / mesh_intervals
    mesh = BoxMesh(op.net.domain, spacing, op.net.dirichlet_faces)
    restriction = BasisRestriction(op.net, mesh)
    precond = SchwarzPreconditioner(
        op, restriction, halo=int(solver_cfg["halo"]),
        connectivity_radius=solver_cfg["connectivity_radius"])
    return mesh, restriction, precond


def _tracked_solve(op, precond, load, lifted, solver_cfg: dict):
    rhs = op.reduced_rhs(load, lifted)
    reference = None
    ref_info = {"method": "none"}
    if solver_cfg["track_reference"]:
        reference, ref_info = reference_solve(
            op.matrix_free, rhs, precond,
            direct_limit=int(solver_cfg["direct_limit"]))
    result = pcg(op.matrix_free, rhs, precond,
                 tol=float(solver_cfg["tol"]),
                 maxiter=int(solver_cfg["maxiter"]),
                 reference=reference)
    return result, ref_info


def _solve_summary(mesh_intervals: int, result, precond, ref_info) -> dict:
    return {
        "mesh_intervals": mesh_intervals,
        "iterations": result.iterations,
        "converged": bool(result.converged),
        "patches": precond.npatches,
        "patches_skipped": precond.patches_skipped,
        "reference": ref_info["method"],
        "tau_mean": result.tau_mean,
        "tau_max": result.tau_max,
    }


def _heat_load_and_lift(op, cfg):
    conductivity_mode = cfg["heat"]["conductivity"]
    del conductivity_mode
    load = op.mass_load(np.ones(op.net.nnodes))
    return load, None


def _heat_conductivity(net: SpatialNetwork, cfg) -> np.ndarray | None:
    mode = cfg["heat"]["conductivity"]
    if mode == "uniform":
        return None
    if mode == "random":
        # separate counter-based stream so the draw count cannot interact
        # with network generation
        rng = np.random.Generator(np.random.Philox(key=[int(cfg["seed"]), 0xC0]))
        return 0.1 + 0.9 * rng.random(net.nedges)
    raise ConfigError("heat.conductivity must be 'uniform' or 'random'")


def _structural_pieces(net, cfg, ncomp):
    scfg = cfg["structural"]
    params = StructuralParams(wire_radius=float(scfg["wire_radius"]),
                              youngs_modulus=float(scfg["youngs_modulus"]))
    op = structural_operator(net, ncomp, params=params,
                             pair_policy=scfg["pair_policy"])
    return op, params


def _experiment_operator_and_data(cfg, net):
    kind = cfg["experiment"]
    if kind in ("heat", "cd-analysis"):
        op = heat_operator(net, _heat_conductivity(net, cfg))
        load, lifted = _heat_load_and_lift(op, cfg)
        return op, load, lifted
    scfg = cfg["structural"]
    if kind == "tensile":
        op, _ = _structural_pieces(net, cfg, 2)
        strain = float(scfg["boundary_strain"])
        lifted = op.flatten_field(np.stack(
            [strain * net.coords[:, 0], np.zeros(net.nnodes)]))
        load = np.zeros(op.ndofs)
        return op, load, lifted
    if kind == "lateral":
        op, _ = _structural_pieces(net, cfg, 3)
        factor = float(scfg["lateral_factor"])
        lifted = op.flatten_field(np.stack(
            [factor * net.coords[:, 0], np.zeros(net.nnodes),
             np.zeros(net.nnodes)]))
        body = np.zeros((3, net.nnodes))
        body[2] = float(scfg["body_load"])
        load = op.mass_load(body)
        return op, load, lifted
    raise ConfigError(f"unknown experiment {kind!r}")


# ----------------------------------------------------------------------
# runners


def run_experiment(config_path: str, outdir: str, threads: int = 1) -> dict:
    """Run the configured experiment; emits CSVs plus manifest.json into
    ``outdir`` and returns the manifest."""
    cfg, config_hash = load_config(config_path)
    os.makedirs(outdir, exist_ok=True)
    net, net_stats = build_network(cfg)
    op, load, lifted = _experiment_operator_and_data(cfg, net)

    outputs = {}
    solves = []
    cd_rows = []
    analysis_rows = []
    for m in cfg["solver"]["mesh_intervals"]:
        mesh, _, precond = _solver_stack(op, m, cfg["solver"])
        result, ref_info = _tracked_solve(op, precond, load, lifted,
                                          cfg["solver"])
        name = f"solve_m{m}.csv"
        outputs[name] = write_solve_csv(os.path.join(outdir, name), result)
        full = op.expand(result.solution, lifted)
        sol_name, sol_hash = _save_solution(outdir, f"m{m}", full)
        outputs[sol_name] = sol_hash
        summary = _solve_summary(m, result, precond, ref_info)
        summary["mesh"] = mesh.describe()
        solves.append(summary)

        if cfg["experiment"] == "cd-analysis":
            acfg = cfg["analysis"]
            hom = homogeneity_scan(net, m)
            con = connectivity_scan(net, m, margin=acfg["margin"],
                                    tol=float(acfg["eig_tol"]),
                                    maxiter=int(acfg["eig_maxiter"]),
                                    threads=threads)
            analysis_rows += [(m, b, float(hom.values[b.index]))
                              for b in con.boxes]
            cd_rows.append({
                "grid": m,
                "sigma_hat": hom.sigma_hat,
                "mu_hat": con.mu_hat,
                "tau_mean": result.tau_mean,
                "tau_max": result.tau_max,
                "cd_hat": cd_estimate(result.tau_mean, hom.sigma_hat,
                                      con.mu_hat),
                "predicted_rate": predicted_contraction(hom.sigma_hat,
                                                        con.mu_hat),
                "violations": len(con.violations),
            })

    if cd_rows:
        header = ("grid,sigma_hat,mu_hat,tau_mean,tau_max,cd_hat,"
                  "predicted_rate")
        lines = [header] + [
            f"{r['grid']},{_fmt(r['sigma_hat'])},{_fmt(r['mu_hat'])},"
            f"{_fmt(r['tau_mean'])},{_fmt(r['tau_max'])},{_fmt(r['cd_hat'])},"
            f"{_fmt(r['predicted_rate'])}" for r in cd_rows]
        outputs["cd_analysis.csv"] = _write_text(
            os.path.join(outdir, "cd_analysis.csv"), "\n".join(lines) + "\n")
        outputs["analysis.csv"] = write_analysis_csv(
            os.path.join(outdir, "analysis.csv"), analysis_rows,
            net.dimension)

    manifest = {
        "schema": 1,
        "experiment": cfg["experiment"],
        "seed": int(cfg["seed"]),
        "config_sha256": config_hash,
        "network": net_stats,
        "solves": solves,
        "cd_rows": cd_rows,
        "outputs": outputs,
    }
    write_manifest(outdir, manifest)
    return manifest


def run_network_analysis(net: SpatialNetwork, divisions, outdir: str,
                         margin=None, tol: float = 1e-8, maxiter: int = 500,
                         threads: int = 1, config_sha256: str | None = None,
                         extra: dict | None = None) -> dict:
    """Assumption audit over several partitions; writes analysis.csv and a
    manifest, returns the manifest (summary holds per-grid constants and
    any violations)."""
    os.makedirs(outdir, exist_ok=True)
    rows = []
    per_grid = []
    scans = []
    for g in divisions:
        hom = homogeneity_scan(net, int(g))
        con = connectivity_scan(net, int(g), margin=margin, tol=tol,
                                maxiter=maxiter, threads=threads)
        scans.append(con)
        rows += [(int(g), b, float(hom.values[b.index])) for b in con.boxes]
        per_grid.append({
            "grid": int(g),
            "box_side": con.box_side,
            "sigma_hat": hom.sigma_hat,
            "rho_hat": hom.rho_hat,
            "empty_boxes": hom.empty_boxes,
            "mu_hat": con.mu_hat,
            "mu_mean": con.mu_mean,
            "mean_inverse_lambda2": con.mean_inverse_lambda2,
            "violations": con.violations,
        })
    outputs = {"analysis.csv": write_analysis_csv(
        os.path.join(outdir, "analysis.csv"), rows, net.dimension)}
    manifest = {
        "schema": 1,
        "kind": "analysis",
        "config_sha256": config_sha256,
        "network": {"nodes": net.nnodes, "edges": net.nedges,
                    "total_edge_length": net.total_edge_length},
        "per_grid": per_grid,
        "poincare_slope": poincare_slope(scans),
        "outputs": outputs,
    }
    if extra:
        manifest.update(extra)
    write_manifest(outdir, manifest)
    return manifest
