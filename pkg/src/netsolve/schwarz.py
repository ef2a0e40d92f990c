"""Two-level overlapping Schwarz preconditioner and conjugate gradients.

The preconditioner combines, additively,

* a coarse correction through the multilinear mesh basis restricted to
  free vertices and free network dofs, and
* one local solve per mesh vertex on the dofs strictly interior to the
  surrounding element patch (all components of every such network node),
  which is exactly the support of that vertex's hat function when the
  halo is 1.

A network node interior to an element then lies in at most 2**d vertex
patches (fewer on mesh lines), which keeps the subspace overlap bounded;
the largest eigenvalue of the preconditioned operator is bounded by a
constant depending only on the dimension, while the smallest eigenvalue
is where the network's homogeneity and connectivity constants enter. The preconditioned CG iteration tracks,
when a reference solution is supplied, the energy-norm error per
iteration and the resulting per-iteration contraction rates.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .boxmesh import BasisRestriction
from .errors import OperatorSingularError, SolverBreakdownError
from .operators import AssembledOperator

log = logging.getLogger(__name__)


class SchwarzPreconditioner:
    """Additive two-level Schwarz preconditioner for an assembled operator.

    Parameters
    ----------
    operator : the assembled model (its free-dof matrix defines the system).
    restriction : mesh basis over the same network; every element must
        contain network mass (enforced at restriction construction).
    halo : patch half-width in elements around each vertex (default 1).
    use_coarse : drop the coarse term when False; a single patch covering
        the whole domain then makes the preconditioner an exact solve.
    connectivity_radius : optional audited radius of the network; patches
        narrower than twice this radius undermine the local solves, which
        is worth a warning but is not an error.
    patch_vertices : optional explicit list of mesh vertex ids to build
        patches around (default: every vertex). A single vertex with a
        halo spanning the whole mesh, combined with use_coarse=False,
        turns the preconditioner into an exact solve.
    """

    def __init__(self, operator: AssembledOperator,
                 restriction: BasisRestriction, halo: int = 1,
                 use_coarse: bool = True,
                 connectivity_radius: float | None = None,
                 patch_vertices=None):
        if restriction.net is not operator.net:
            raise ValueError("restriction and operator use different networks")
        if halo < 1:
            raise ValueError("patch halo must be at least 1")
        mesh = restriction.mesh
        if connectivity_radius is not None and mesh.spacing < 2 * connectivity_radius:
            warnings.warn(
                f"mesh spacing {mesh.spacing} is below twice the connectivity "
                f"radius {connectivity_radius}; patch solves may be too local",
                stacklevel=2)

        self.operator = operator
        self.restriction = restriction
        self.halo = halo
        matrix = operator.matrix_free
        n = operator.net.nnodes
        ncomp = operator.ncomp

        full_to_free = -np.ones(operator.ndofs, dtype=np.int64)
        full_to_free[operator.free_dofs] = np.arange(operator.ndofs_free)

        self.coarse_basis = None
        self.coarse_lu = None
        if use_coarse:
            phi_free = restriction.basis[:, :mesh.nfree]
            coarse = sp.kron(sp.eye(ncomp, format="csr"), phi_free,
                             format="csr")[operator.free_dofs]
            self.coarse_basis = coarse.tocsr()
            a0 = (self.coarse_basis.T @ matrix @ self.coarse_basis).tocsc()
            try:
                self.coarse_lu = splu(a0)
            except RuntimeError as exc:
                raise OperatorSingularError(
                    f"coarse matrix is singular: {exc}") from None

        if patch_vertices is None:
            patch_vertices = range(mesh.nvert_total)
        self.patch_dofs = []
        self.patch_lus = []
        skipped = 0
        for j in patch_vertices:
            nodes = restriction.patch_nodes(j, halo)
            if nodes.size == 0:
                skipped += 1
                log.debug("patch at vertex %d skipped: no network nodes", j)
                continue
            dofs = (np.arange(ncomp)[:, None] * n + nodes[None, :]).ravel()
            free = full_to_free[dofs]
            free = free[free >= 0]
            if free.size == 0:
                skipped += 1
                log.debug("patch at vertex %d skipped: only constrained "
                          "nodes", j)
                continue
            sub = matrix[free][:, free].tocsc()
            try:
                lu = splu(sub)
            except RuntimeError as exc:
                raise OperatorSingularError(
                    f"patch at vertex {j} has a singular matrix: {exc}") from None
            self.patch_dofs.append(free)
            self.patch_lus.append(lu)
        self.patches_skipped = skipped

    @property
    def npatches(self) -> int:
        return len(self.patch_lus)

    def dof_patch_counts(self) -> np.ndarray:
        """Number of local patches each free dof belongs to.

        The bounded-overlap property of halo-1 vertex patches says every
        free dof lies in at least one and at most 2**d patches (exactly
        2**d in the interior, fewer only through boundary clipping).
        """
        counts = np.zeros(self.operator.ndofs_free, dtype=np.int64)
        for dofs in self.patch_dofs:
            counts[dofs] += 1
        return counts

    def apply(self, residual: np.ndarray) -> np.ndarray:
        """Apply the additive preconditioner to a free-dof residual."""
        r = np.asarray(residual, dtype=np.float64)
        z = np.zeros_like(r)
        if self.coarse_lu is not None:
            z += self.coarse_basis @ self.coarse_lu.solve(
                self.coarse_basis.T @ r)
        for dofs, lu in zip(self.patch_dofs, self.patch_lus):
            z[dofs] += lu.solve(r[dofs])
        return z

    def __call__(self, residual: np.ndarray) -> np.ndarray:
        return self.apply(residual)


# ----------------------------------------------------------------------
# preconditioned conjugate gradients


@dataclass
class SolveResult:
    solution: np.ndarray
    iterations: int
    converged: bool
    residual_norms: list = field(default_factory=list)
    energy_errors: list | None = None
    rates: list | None = None
    tau_mean: float | None = None
    tau_max: float | None = None


def _rate_stats(errors: list) -> tuple[list, float | None, float | None]:
    rates = []
    for k in range(1, len(errors)):
        prev, cur = errors[k - 1], errors[k]
        rates.append(cur / prev if prev > 0 else float("nan"))
    # the first step mixes in the initial guess; steady rates start at 2
    steady = [t for t in rates[1:] if np.isfinite(t)]
    if not steady:
        return rates, None, None
    return rates, float(np.mean(steady)), float(np.max(steady))


def pcg(matrix: sp.spmatrix, rhs: np.ndarray, precond=None,
        tol: float = 1e-8, maxiter: int = 1000,
        reference: np.ndarray | None = None) -> SolveResult:
    """Preconditioned conjugate gradients with energy-error tracking.

    Stops when the preconditioned residual norm sqrt(r.z) falls below
    ``tol`` times its initial value. A zero right-hand side returns the
    zero solution after zero iterations. Loss of positivity in either the
    preconditioner or the operator raises SolverBreakdownError.

    When ``reference`` is given, the energy-norm error |x - reference|_K
    is recorded before the first and after every iteration, along with
    the per-iteration contraction rates; the mean and max rate are taken
    from iteration 2 on.
    """
    b = np.asarray(rhs, dtype=np.float64)
    apply_b = (lambda r: r.copy()) if precond is None else (
        precond.apply if hasattr(precond, "apply") else precond)

    x = np.zeros_like(b)
    if not np.any(b):
        return SolveResult(x, 0, True, [0.0],
                           energy_errors=None if reference is None else [0.0])

    errors = None
    if reference is not None:
        diff = x - reference
        errors = [float(np.sqrt(diff @ (matrix @ diff)))]

    r = b.copy()
    z = apply_b(r)
    rz = float(r @ z)
    if rz <= 0.0:
        raise SolverBreakdownError("preconditioner produced a non-positive "
                                   "inner product on the initial residual")
    norm0 = np.sqrt(rz)
    norms = [norm0]
    p = z.copy()
    converged = False
    it = 0
    for it in range(1, maxiter + 1):
        kp = matrix @ p
        pkp = float(p @ kp)
        if pkp <= 0.0:
            raise SolverBreakdownError("operator produced a non-positive "
                                       "curvature; it is not positive definite")
        alpha = rz / pkp
        x += alpha * p
        r -= alpha * kp
        z = apply_b(r)
        rz_next = float(r @ z)
        if rz_next < 0.0:
            raise SolverBreakdownError("preconditioner produced a negative "
                                       "inner product; it is not positive "
                                       "definite")
        norms.append(float(np.sqrt(rz_next)))
        if errors is not None:
            diff = x - reference
            errors.append(float(np.sqrt(max(diff @ (matrix @ diff), 0.0))))
        if norms[-1] <= tol * norm0:
            converged = True
            break
        if rz_next == 0.0:
            converged = True
            break
        beta = rz_next / rz
        rz = rz_next
        p = z + beta * p

    result = SolveResult(x, it, converged, norms, energy_errors=errors)
    if errors is not None:
        result.rates, result.tau_mean, result.tau_max = _rate_stats(errors)
    return result


def reference_solve(matrix: sp.spmatrix, rhs: np.ndarray, precond=None,
                    direct_limit: int = 600_000):
    """High-accuracy solve used as the error-tracking reference.

    Small systems use a sparse direct factorization plus one step of
    iterative refinement; larger ones fall back to tightly converged PCG,
    which needs a preconditioner. Returns (solution, info)."""
    n = matrix.shape[0]
    if n <= direct_limit:
        lu = splu(matrix.tocsc())
        x = lu.solve(rhs)
        x += lu.solve(rhs - matrix @ x)
        return x, {"method": "direct", "refinement_steps": 1}
    if precond is None:
        raise ValueError("a preconditioner is required for the iterative "
                         "reference path")
    res = pcg(matrix, rhs, precond, tol=1e-13, maxiter=10_000)
    if not res.converged:
        raise SolverBreakdownError("reference solve did not converge")
    return res.solution, {"method": "pcg", "iterations": res.iterations}


# ----------------------------------------------------------------------
# spectrum of the preconditioned operator


def preconditioned_spectrum_dense(matrix: sp.spmatrix, apply_precond,
                                  limit: int = 300) -> np.ndarray:
    """All eigenvalues of the preconditioned operator, by dense reduction.

    Builds the preconditioner's matrix column by column and solves the
    symmetric generalized problem (K B K) v = lam K v, whose eigenvalues
    are those of B K. Only sensible for small systems; refuses above
    ``limit`` dofs."""
    n = matrix.shape[0]
    if n > limit:
        raise ValueError(f"dense spectrum limited to {limit} dofs, got {n}")
    cols = np.empty((n, n))
    eye = np.eye(n)
    for k in range(n):
        cols[:, k] = apply_precond(eye[:, k])
    kd = matrix.toarray()
    s = kd @ cols @ kd
    s = 0.5 * (s + s.T)
    return scipy.linalg.eigh(s, kd, eigvals_only=True)


def preconditioned_extremes(matrix: sp.spmatrix, apply_precond,
                            iterations: int = 80, seed: int = 0x5EED):
    """Extreme eigenvalues of the preconditioned operator.

    Lanczos in the energy inner product on B K with full
    reorthogonalization; returns (smallest, largest, info)."""
    n = matrix.shape[0]
    iterations = min(iterations, n)
    rng = np.random.Generator(np.random.Philox(key=seed))
    v = rng.standard_normal(n)
    v /= np.sqrt(v @ (matrix @ v))
    basis = [v]
    alphas, betas = [], []
    for j in range(iterations):
        w = apply_precond(matrix @ basis[j])
        alpha = float(w @ (matrix @ basis[j]))
        w = w - alpha * basis[j]
        if j > 0:
            w -= betas[-1] * basis[j - 1]
        # full reorthogonalization in the K inner product
        for u in basis:
            w -= float(w @ (matrix @ u)) * u
        alphas.append(alpha)
        beta = float(np.sqrt(max(w @ (matrix @ w), 0.0)))
        if beta < 1e-14 or j == iterations - 1:
            break
        betas.append(beta)
        basis.append(w / beta)
    ritz = scipy.linalg.eigvalsh_tridiagonal(alphas, betas[:len(alphas) - 1])
    info = {"lanczos_steps": len(alphas)}
    return float(ritz[0]), float(ritz[-1]), info


# ----------------------------------------------------------------------
# rate theory helpers


def cg_rate_from_condition(kappa: float) -> float:
    """Asymptotic CG contraction rate for a given condition number."""
    sk = np.sqrt(kappa)
    return (sk - 1.0) / (sk + 1.0)


def cg_error_bound(kappa: float, iteration: int, initial_error: float) -> float:
    """Classical CG energy-error bound 2 rate**l |e0|."""
    return 2.0 * cg_rate_from_condition(kappa) ** iteration * initial_error
