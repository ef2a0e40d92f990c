"""Config loading, rate arithmetic, and the experiment runners."""

import copy
import hashlib
import json
import os

import numpy as np
import pytest

from netsolve import (ConfigError, build_network, cd_estimate, grid_network,
                      homogeneity_scan, load_config, predicted_contraction,
                      run_experiment, run_network_analysis, write_network)
from netsolve.experiments import (_DEFAULTS, _heat_conductivity,
                                  _merge_strict, write_solve_csv)
from netsolve.schwarz import SolveResult


def write_yaml(path, text):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(text)
    return str(path)


def file_sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# ----------------------------------------------------------------------
# config loading


def test_empty_override_keeps_defaults():
    assert _merge_strict(_DEFAULTS, {}) == _DEFAULTS


def test_merge_does_not_mutate_defaults():
    before = copy.deepcopy(_DEFAULTS)
    out = _merge_strict(_DEFAULTS, {"solver": {"tol": 1e-3}})
    assert out["solver"]["tol"] == 1e-3
    assert _DEFAULTS == before


def test_unknown_key_reports_dotted_path():
    with pytest.raises(ConfigError, match="solver.tolerance"):
        _merge_strict(_DEFAULTS, {"solver": {"tolerance": 1e-3}})
    with pytest.raises(ConfigError, match="'turbo'"):
        _merge_strict(_DEFAULTS, {"turbo": True})


def test_section_override_must_be_mapping():
    with pytest.raises(ConfigError, match="mapping"):
        _merge_strict(_DEFAULTS, {"solver": 3})


def test_load_config_minimal(tmp_path):
    path = write_yaml(tmp_path / "c.yaml", "experiment: heat\n")
    cfg, digest = load_config(path)
    assert cfg["experiment"] == "heat"
    assert cfg["seed"] == 0
    assert cfg["solver"]["mesh_intervals"] == [8]
    assert cfg["network"]["source"] == "grid"
    assert digest == file_sha256(path)


def test_load_config_normalizes_scalar_lists(tmp_path):
    path = write_yaml(tmp_path / "c.yaml",
                      "experiment: heat\n"
                      "solver:\n  mesh_intervals: 4\n"
                      "analysis:\n  divisions: 2\n")
    cfg, _ = load_config(path)
    assert cfg["solver"]["mesh_intervals"] == [4]
    assert cfg["analysis"]["divisions"] == [2]


def test_load_config_rejects_bad_schema(tmp_path):
    path = write_yaml(tmp_path / "c.yaml", "schema: 2\nexperiment: heat\n")
    with pytest.raises(ConfigError, match="schema"):
        load_config(path)


def test_load_config_rejects_unknown_experiment(tmp_path):
    path = write_yaml(tmp_path / "c.yaml", "experiment: plasma\n")
    with pytest.raises(ConfigError, match="experiment"):
        load_config(path)


def test_load_config_rejects_non_mapping(tmp_path):
    path = write_yaml(tmp_path / "c.yaml", "- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(path)


# ----------------------------------------------------------------------
# network construction from a config


def base_cfg(**overrides):
    cfg = copy.deepcopy(_DEFAULTS)
    cfg["experiment"] = "heat"
    for key, value in overrides.items():
        section, _, leaf = key.partition(".")
        if leaf:
            cfg[section][leaf] = value
        else:
            cfg[section] = value
    return cfg


def test_build_network_grid_defaults_to_all_faces():
    cfg = base_cfg(**{"network.intervals": 4})
    net, stats = build_network(cfg)
    assert stats["source"] == "grid"
    assert stats["intervals"] == 4
    assert stats["nodes"] == 25 and stats["edges"] == 40
    assert stats["total_edge_length"] == pytest.approx(10.0)
    on_rim = np.any((net.coords == 0.0) | (net.coords == 1.0), axis=1)
    assert np.array_equal(net.dirichlet_mask, on_rim)


def test_build_network_grid_face_list():
    cfg = base_cfg(**{"network.intervals": 4, "network.dirichlet": ["xmin"]})
    net, _ = build_network(cfg)
    assert np.array_equal(net.dirichlet_mask, net.coords[:, 0] == 0.0)


def test_build_network_dirichlet_all_token():
    cfg = base_cfg(**{"network.intervals": 2, "network.dirichlet": "all"})
    net, _ = build_network(cfg)
    assert net.dirichlet_mask.sum() == 8


def test_build_network_bad_dirichlet():
    cfg = base_cfg(**{"network.dirichlet": 17})
    with pytest.raises(ConfigError, match="dirichlet"):
        build_network(cfg)


def test_build_network_from_file(tmp_path):
    path = tmp_path / "grid.net"
    write_network(grid_network(2), path)
    cfg = base_cfg(**{"network.source": "file", "network.path": str(path),
                      "network.dirichlet": ["ymax"]})
    net, stats = build_network(cfg)
    assert stats["source"] == "file" and stats["path"] == str(path)
    assert net.nnodes == 9
    assert np.array_equal(net.dirichlet_mask, net.coords[:, 1] == 1.0)


def test_build_network_file_needs_path():
    cfg = base_cfg(**{"network.source": "file"})
    with pytest.raises(ConfigError, match="path"):
        build_network(cfg)


def test_build_network_unknown_source():
    cfg = base_cfg(**{"network.source": "mesh"})
    with pytest.raises(ConfigError, match="source"):
        build_network(cfg)


def test_build_network_fiber_keeps_generator_stats():
    cfg = base_cfg(**{"network.source": "fiber", "network.fiber_length": 0.25,
                      "network.density": 40.0,
                      "network.dirichlet": ["xmin", "xmax"]})
    cfg["seed"] = 11
    net, stats = build_network(cfg)
    assert stats["source"] == "fiber"
    assert stats["seed"] == 11 and stats["kind"] == "uniform"
    assert stats["nodes"] == net.nnodes and stats["edges"] == net.nedges
    assert net.dirichlet_mask.sum() == np.sum((net.coords[:, 0] == 0.0)
                                              | (net.coords[:, 0] == 1.0))


# ----------------------------------------------------------------------
# rate arithmetic


def test_cd_estimate_formula():
    # (1 + 0.5) / (sqrt(4) * 0.25 * (1 - 0.5)) = 1.5 / 0.25
    assert cd_estimate(0.5, 4.0, 0.25) == pytest.approx(6.0)
    assert cd_estimate(0.0, 1.0, 1.0) == pytest.approx(1.0)


def test_predicted_contraction_formula():
    # sqrt(kappa) = 3.5 * sqrt(4) * 0.5 = 3.5
    assert predicted_contraction(4.0, 0.5) == pytest.approx(2.5 / 4.5)
    assert predicted_contraction(1.0, 1.0, cd=1.0) == 0.0


def test_rate_arithmetic_round_trip():
    # predicted contraction fed back through the estimator recovers the
    # coefficient it was computed from
    sigma, mu = 1.3, 0.6
    tau = predicted_contraction(sigma, mu, cd=2.0)
    assert cd_estimate(tau, sigma, mu) == pytest.approx(2.0, rel=1e-12)


# ----------------------------------------------------------------------
# output files


def test_solve_csv_layout(tmp_path):
    result = SolveResult(solution=np.zeros(1), iterations=2, converged=True,
                         residual_norms=[1.0, 0.25, 0.0625],
                         energy_errors=[1.0, 0.5, 0.125],
                         rates=[0.5, 0.25], tau_mean=0.375, tau_max=0.5)
    path = tmp_path / "solve.csv"
    digest = write_solve_csv(str(path), result)
    text = path.read_bytes().decode("ascii")
    assert text.splitlines() == [
        "iteration,residual,k_error,rate",
        "0,1.0,1.0,",
        "1,0.25,0.5,0.5",
        "2,0.0625,0.125,0.25",
    ]
    assert text.endswith("\n")
    assert digest == file_sha256(path)


def test_solve_csv_without_reference_tracking(tmp_path):
    result = SolveResult(solution=np.zeros(1), iterations=1, converged=True,
                         residual_norms=[2.0, 0.0])
    path = tmp_path / "solve.csv"
    write_solve_csv(str(path), result)
    lines = path.read_text("ascii").splitlines()
    assert lines[1] == "0,2.0,,"
    assert lines[2] == "1,0.0,,"


# ----------------------------------------------------------------------
# conductivity sampling


def test_heat_conductivity_uniform_is_none():
    cfg = base_cfg()
    assert _heat_conductivity(grid_network(2), cfg) is None


def test_heat_conductivity_random_stream():
    cfg = base_cfg(**{"heat.conductivity": "random"})
    cfg["seed"] = 7
    net = grid_network(4)
    gamma = _heat_conductivity(net, cfg)
    rng = np.random.Generator(np.random.Philox(key=[7, 0xC0]))
    assert np.array_equal(gamma, 0.1 + 0.9 * rng.random(net.nedges))
    assert gamma.min() >= 0.1 and gamma.max() < 1.0
    again = _heat_conductivity(net, cfg)
    assert np.array_equal(gamma, again)


def test_heat_conductivity_bad_mode():
    cfg = base_cfg(**{"heat.conductivity": "banded"})
    with pytest.raises(ConfigError, match="conductivity"):
        _heat_conductivity(grid_network(2), cfg)


# ----------------------------------------------------------------------
# full runs

HEAT_YAML = """\
experiment: heat
seed: 1
network:
  source: grid
  intervals: 8
solver:
  mesh_intervals: [2, 4]
  tol: 1.0e-10
"""


def test_run_experiment_heat_end_to_end(tmp_path):
    config = write_yaml(tmp_path / "heat.yaml", HEAT_YAML)
    outdir = tmp_path / "out"
    manifest = run_experiment(config, str(outdir))

    assert manifest["schema"] == 1
    assert manifest["experiment"] == "heat"
    assert manifest["seed"] == 1
    assert manifest["config_sha256"] == file_sha256(config)
    assert manifest["network"]["nodes"] == 81
    assert manifest["cd_rows"] == []

    assert [s["mesh_intervals"] for s in manifest["solves"]] == [2, 4]
    for summary in manifest["solves"]:
        assert summary["converged"]
        assert summary["reference"] == "direct"
        assert summary["patches_skipped"] == 0
        assert 0.0 < summary["tau_mean"] <= summary["tau_max"] < 1.0
        assert summary["mesh"]["spacing"] == pytest.approx(
            1.0 / summary["mesh_intervals"])

    # manifest hashes certify exactly what is on disk
    for name, digest in manifest["outputs"].items():
        assert digest == file_sha256(outdir / name)
    with open(outdir / "manifest.json", "rb") as fh:
        assert json.load(fh) == manifest

    # full solution: zero on the clamped rim, positive inside
    full = np.load(outdir / "solution_m4.npy")
    net = grid_network(8)
    assert full.shape == (81,)
    assert np.all(full[net.dirichlet_mask] == 0.0)
    assert np.all(full[~net.dirichlet_mask] > 0.0)

    # per-iteration csv: errors fall monotonically to convergence
    lines = (outdir / "solve_m2.csv").read_text("ascii").splitlines()
    assert lines[0] == "iteration,residual,k_error,rate"
    errs = [float(line.split(",")[2]) for line in lines[1:]]
    assert all(a >= b for a, b in zip(errs, errs[1:]))
    assert len(lines) - 1 == manifest["solves"][0]["iterations"] + 1


def test_run_experiment_is_byte_deterministic(tmp_path):
    config = write_yaml(tmp_path / "heat.yaml", HEAT_YAML)
    m1 = run_experiment(config, str(tmp_path / "a"))
    m2 = run_experiment(config, str(tmp_path / "b"))
    assert m1 == m2
    names = sorted(os.listdir(tmp_path / "a"))
    assert names == sorted(os.listdir(tmp_path / "b"))
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def test_run_experiment_random_conductivity_changes_solution(tmp_path):
    uniform = write_yaml(tmp_path / "u.yaml", HEAT_YAML)
    random = write_yaml(tmp_path / "r.yaml",
                        HEAT_YAML + "heat:\n  conductivity: random\n")
    mu = run_experiment(uniform, str(tmp_path / "u"))
    mr = run_experiment(random, str(tmp_path / "r"))
    assert mu["outputs"]["solution_m4.npy"] != mr["outputs"]["solution_m4.npy"]


CD_YAML = """\
experiment: cd-analysis
network:
  source: grid
  intervals: 8
solver:
  mesh_intervals: [2]
"""


def test_run_experiment_cd_analysis(tmp_path):
    config = write_yaml(tmp_path / "cd.yaml", CD_YAML)
    outdir = tmp_path / "out"
    manifest = run_experiment(config, str(outdir))

    assert len(manifest["cd_rows"]) == 1
    row = manifest["cd_rows"][0]
    assert row["grid"] == 2
    assert row["violations"] == 0
    hom = homogeneity_scan(grid_network(8), 2)
    assert row["sigma_hat"] == pytest.approx(hom.sigma_hat, rel=1e-12)
    assert np.isfinite(row["mu_hat"]) and row["mu_hat"] > 0.0
    assert row["cd_hat"] == pytest.approx(
        cd_estimate(row["tau_mean"], row["sigma_hat"], row["mu_hat"]))
    assert row["predicted_rate"] == pytest.approx(
        predicted_contraction(row["sigma_hat"], row["mu_hat"]))

    cd_lines = (outdir / "cd_analysis.csv").read_text("ascii").splitlines()
    assert cd_lines[0] == ("grid,sigma_hat,mu_hat,tau_mean,tau_max,"
                           "cd_hat,predicted_rate")
    assert len(cd_lines) == 2
    box_lines = (outdir / "analysis.csv").read_text("ascii").splitlines()
    assert box_lines[0] == ("grid,box_index,center_0,center_1,mass_value,"
                            "lambda1,lambda2,mu")
    assert len(box_lines) == 1 + 4  # 2x2 partition


TENSILE_YAML = """\
experiment: tensile
seed: 5
network:
  source: fiber
  fiber_length: 0.25
  density: 40.0
  dirichlet: [xmin, xmax]
solver:
  mesh_intervals: [2]
  tol: 1.0e-9
"""


def test_run_experiment_tensile_fiber(tmp_path):
    config = write_yaml(tmp_path / "tensile.yaml", TENSILE_YAML)
    outdir = tmp_path / "out"
    manifest = run_experiment(config, str(outdir))
    summary = manifest["solves"][0]
    assert summary["converged"]

    cfg, _ = load_config(config)
    net, _ = build_network(cfg)
    full = np.load(outdir / "solution_m2.npy")
    assert full.shape == (2 * net.nnodes,)
    comps = full.reshape(2, net.nnodes)
    clamped = net.dirichlet_mask
    # clamped nodes carry exactly the boundary strain profile
    assert np.allclose(comps[0][clamped], 0.2 * net.coords[clamped, 0])
    assert np.all(comps[1][clamped] == 0.0)
    # stretching actually moves the interior
    assert np.abs(comps[0][~clamped]).max() > 0.0


LATERAL_YAML = """\
experiment: lateral
seed: 5
network:
  source: fiber
  fiber_length: 0.25
  density: 40.0
  dirichlet: [xmin, xmax]
solver:
  mesh_intervals: [2]
  tol: 1.0e-9
"""


def test_run_experiment_lateral_fiber(tmp_path):
    config = write_yaml(tmp_path / "lateral.yaml", LATERAL_YAML)
    outdir = tmp_path / "out"
    manifest = run_experiment(config, str(outdir))
    assert manifest["solves"][0]["converged"]

    cfg, _ = load_config(config)
    net, _ = build_network(cfg)
    full = np.load(outdir / "solution_m2.npy")
    assert full.shape == (3 * net.nnodes,)
    comps = full.reshape(3, net.nnodes)
    clamped = net.dirichlet_mask
    assert np.allclose(comps[0][clamped], 0.1 * net.coords[clamped, 0])
    assert np.all(comps[2][clamped] == 0.0)
    # downward body load pushes the mass-weighted deflection down
    assert net.mass @ comps[2] < 0.0


def test_run_network_analysis_manifest(tmp_path):
    outdir = tmp_path / "out"
    manifest = run_network_analysis(grid_network(8), [2, 4], str(outdir),
                                    config_sha256="cafe", extra={"note": "x"})
    assert manifest["kind"] == "analysis"
    assert manifest["config_sha256"] == "cafe"
    assert manifest["note"] == "x"
    assert [row["grid"] for row in manifest["per_grid"]] == [2, 4]
    for row in manifest["per_grid"]:
        assert row["violations"] == []
        assert row["empty_boxes"] == []
        assert row["box_side"] == pytest.approx(1.0 / row["grid"])
        assert np.isfinite(row["mu_hat"])
    assert np.isfinite(manifest["poincare_slope"])
    assert manifest["outputs"]["analysis.csv"] == \
        file_sha256(outdir / "analysis.csv")
    with open(outdir / "manifest.json", "rb") as fh:
        assert json.load(fh) == manifest
