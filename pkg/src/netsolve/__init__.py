"""Elliptic solvers and assumption audits for spatial networks."""

from .audit import (BoxAudit, ConnectivityResult, HomogeneityResult,
                    box_subgraph, connectivity_scan, homogeneity_scan,
                    poincare_slope, smallest_pencil_eigenvalue)
from .boxmesh import BasisRestriction, BoxMesh, multilinear_corner_weights
from .errors import (AssumptionViolation, ConfigError, EigenSolveError,
                     FileFormatError, GenerationError, NetsolveError,
                     NetworkDisconnectedError, NetworkInvalidError,
                     OperatorSingularError, ShapeError, SolverBreakdownError)
from .experiments import (build_network, cd_estimate, load_config,
                          predicted_contraction, run_experiment,
                          run_network_analysis)
from .generate import (generate_fiber_network, grid_network,
                       segment_intersection)
from .netfile import read_network, write_network
from .network import Box, SpatialNetwork, all_faces, face_token, parse_face_token
from .operators import (AssembledOperator, StructuralParams,
                        assemble_bending_matrix, assemble_heat_matrix,
                        assemble_tensile_matrix, bending_energy,
                        heat_operator, neighbor_pairs, structural_operator,
                        tensile_energy, write_coordinate_matrix)
from .schwarz import (SchwarzPreconditioner, SolveResult, cg_error_bound,
                      cg_rate_from_condition, pcg, preconditioned_extremes,
                      preconditioned_spectrum_dense, reference_solve)

__version__ = "0.1.0"

__all__ = [
    "AssembledOperator", "AssumptionViolation", "BasisRestriction", "Box",
    "BoxAudit", "BoxMesh", "ConfigError", "ConnectivityResult",
    "EigenSolveError", "FileFormatError", "GenerationError",
    "HomogeneityResult", "NetsolveError", "NetworkDisconnectedError",
    "NetworkInvalidError", "OperatorSingularError", "SchwarzPreconditioner",
    "ShapeError", "SolveResult", "SolverBreakdownError", "SpatialNetwork",
    "StructuralParams", "all_faces", "assemble_bending_matrix",
    "assemble_heat_matrix", "assemble_tensile_matrix", "bending_energy",
    "box_subgraph", "build_network", "cd_estimate", "cg_error_bound",
    "cg_rate_from_condition", "connectivity_scan", "face_token",
    "generate_fiber_network", "grid_network", "heat_operator", "load_config",
    "segment_intersection",
    "homogeneity_scan", "multilinear_corner_weights", "neighbor_pairs",
    "parse_face_token", "pcg", "poincare_slope", "predicted_contraction",
    "preconditioned_extremes", "preconditioned_spectrum_dense",
    "read_network", "reference_solve", "run_experiment",
    "run_network_analysis", "smallest_pencil_eigenvalue",
    "structural_operator", "tensile_energy", "write_coordinate_matrix",
    "write_network",
]
