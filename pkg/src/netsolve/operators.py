"""Model operators on spatial networks: heat conduction and fiber mechanics.

Heat conduction uses one scalar field; its stiffness matrix is the
conductivity-weighted graph Laplacian. Fiber mechanics uses a displacement
field with two or three components (component-major layout: all first
components, then all second components, ...) and a stiffness matrix that is
the sum of

* a tensile part: per edge, stretching along the edge direction is
  penalized with weight gamma1 / length, and
* a bending part: per node and unordered pair of its neighbors, two
  curvature-like difference functionals are penalized, capturing bending
  out of and within the local edge plane.

The two-component problem is the three-component one with the third
displacement component removed; in component-major layout this is the
leading principal block of the three-component matrix.

All assemblies build the upper triangle in a deterministic order and mirror
it, so the returned matrices are bitwise symmetric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, OperatorSingularError, ShapeError
from .network import SpatialNetwork

# Two directions count as parallel when their unit cross product is below
# this; used both for the degenerate-pair rule and the axis fallback.
COLLINEAR_TOL = 1e-8

_EDGE_CHUNK = 200_000
_PAIR_CHUNK = 60_000


@dataclass(frozen=True)
class StructuralParams:
    """Physical parameters of a homogeneous round wire."""

    wire_radius: float = 2.5e-3
    youngs_modulus: float = 210e9

    @property
    def cross_section_area(self) -> float:
        return math.pi * self.wire_radius ** 2

    @property
    def tensile_stiffness(self) -> float:
        """Axial stiffness coefficient: modulus times cross-section area."""
        return self.youngs_modulus * self.cross_section_area

    @property
    def second_moment(self) -> float:
        return 0.25 * math.pi * self.wire_radius ** 4

    @property
    def bending_modulus(self) -> float:
        """Flexural rigidity: modulus times second moment of area."""
        return self.youngs_modulus * self.second_moment


def _mirror_upper(upper: sp.spmatrix) -> sp.csr_matrix:
    """Symmetrize an upper-triangular matrix; mirrored entries reuse the
    stored floats, so the result is bitwise symmetric."""
    u = upper.tocsr()
    u.sum_duplicates()
    return (u + sp.triu(u, k=1).T).tocsr()


# ----------------------------------------------------------------------
# heat conduction


def resolve_conductivity(net: SpatialNetwork, conductivity=None) -> np.ndarray:
    """Per-edge conductivities: explicit argument, else the network's edge
    weights, else 1."""
    if conductivity is None:
        if net.edge_weight is not None:
            return net.edge_weight
        return np.ones(net.nedges)
    g = np.asarray(conductivity, dtype=np.float64)
    if g.ndim == 0:
        g = np.full(net.nedges, float(g))
    if g.shape != (net.nedges,):
        raise ShapeError("conductivity must be a scalar or one value per edge")
    if np.any(g <= 0) or not np.all(np.isfinite(g)):
        raise ConfigError("conductivities must be positive and finite")
    return g


def assemble_heat_matrix(net: SpatialNetwork, conductivity=None) -> sp.csr_matrix:
    """Conductivity-weighted graph Laplacian, shape (nnodes, nnodes).

    With unit conductivity this reproduces the plain graph Laplacian
    exactly."""
    g = resolve_conductivity(net, conductivity)
    e = net.edges
    w = g / net.edge_lengths
    i = np.concatenate([e[:, 0], e[:, 1], e[:, 0]])
    j = np.concatenate([e[:, 0], e[:, 1], e[:, 1]])
    v = np.concatenate([w, w, -w])
    upper = sp.coo_matrix((v, (i, j)), shape=(net.nnodes, net.nnodes))
    return _mirror_upper(upper)


# ----------------------------------------------------------------------
# fiber mechanics: tensile part


def assemble_tensile_matrix(net: SpatialNetwork, gamma1) -> sp.csr_matrix:
    """Axial stretching stiffness over three displacement components,
    shape (3 nnodes, 3 nnodes)."""
    g = np.asarray(gamma1, dtype=np.float64)
    if g.ndim == 0:
        g = np.full(net.nedges, float(g))
    if g.shape != (net.nedges,):
        raise ShapeError("gamma1 must be a scalar or one value per edge")

    n = net.nnodes
    blocks = []
    for lo in range(0, net.nedges, _EDGE_CHUNK):
        sl = slice(lo, min(lo + _EDGE_CHUNK, net.nedges))
        e = net.edges[sl]
        ell = net.edge_lengths[sl]
        w = g[sl] / ell
        direction = np.zeros((e.shape[0], 3))
        direction[:, :net.dimension] = (net.coords[e[:, 0]]
                                        - net.coords[e[:, 1]]) / ell[:, None]
        # 6 dofs per edge: components 0..2 at both endpoints
        dofs = np.empty((e.shape[0], 6), dtype=np.int64)
        vals = np.empty((e.shape[0], 6))
        for a in range(3):
            dofs[:, 2 * a] = a * n + e[:, 0]
            dofs[:, 2 * a + 1] = a * n + e[:, 1]
            vals[:, 2 * a] = direction[:, a]
            vals[:, 2 * a + 1] = -direction[:, a]
        entries = w[:, None, None] * vals[:, :, None] * vals[:, None, :]
        rows = np.broadcast_to(dofs[:, :, None], entries.shape)
        cols = np.broadcast_to(dofs[:, None, :], entries.shape)
        keep = rows <= cols
        blocks.append(sp.coo_matrix(
            (entries[keep], (rows[keep], cols[keep])),
            shape=(3 * n, 3 * n)).tocsr())
    upper = blocks[0] if blocks else sp.csr_matrix((3 * n, 3 * n))
    for b in blocks[1:]:
        upper = upper + b
    return _mirror_upper(upper)


def tensile_energy(net: SpatialNetwork, field, gamma1) -> float:
    """Axial stretching energy evaluated edge by edge in difference form,
    so rigid translations and rotations give exact zeros up to the rounding
    of the projection itself."""
    comps = _pad3(net, field)
    g = np.asarray(gamma1, dtype=np.float64)
    if g.ndim == 0:
        g = np.full(net.nedges, float(g))
    e = net.edges
    ell = net.edge_lengths
    diff = comps[:, e[:, 0]] - comps[:, e[:, 1]]
    direction = np.zeros((3, net.nedges))
    direction[:net.dimension] = ((net.coords[e[:, 0]]
                                  - net.coords[e[:, 1]]) / ell[:, None]).T
    proj = np.einsum("ae,ae->e", direction, diff)
    return float(np.sum(g / ell * proj * proj))


# ----------------------------------------------------------------------
# fiber mechanics: bending part


def _pad3(net: SpatialNetwork, field) -> np.ndarray:
    v = np.asarray(field, dtype=np.float64)
    if v.ndim == 1 and v.size != net.nnodes and v.size % net.nnodes == 0:
        # flat component-major displacement vector
        v = v.reshape(-1, net.nnodes)
    comps = net.as_components(v)
    if comps.shape[0] == 3:
        return comps
    if comps.shape[0] == 2:
        out = np.zeros((3, net.nnodes))
        out[:2] = comps
        return out
    raise ShapeError("displacement field needs 2 or 3 components")


def neighbor_pairs(net: SpatialNetwork, pair_policy: str = "all"):
    """Enumerate unordered neighbor pairs around every node.

    Returns (x, y, z, edge_xy, edge_xz) index arrays. The ``same-fiber``
    policy keeps only pairs whose two edges carry the same fiber id.
    """
    if pair_policy not in ("all", "same-fiber"):
        raise ConfigError(f"unknown pair policy {pair_policy!r}")
    if pair_policy == "same-fiber" and net.edge_fiber is None:
        raise ConfigError("pair policy 'same-fiber' needs a network with "
                          "fiber ids")
    indptr, nbr, eid = net.adjacency
    deg = np.diff(indptr)
    xs, ys, zs, e1s, e2s = [], [], [], [], []
    for d in np.unique(deg):
        if d < 2:
            continue
        nodes = np.flatnonzero(deg == d)
        p, q = np.triu_indices(d, k=1)
        at = indptr[nodes][:, None] + np.arange(d)
        nb = nbr[at]
        ed = eid[at]
        x = np.repeat(nodes, p.size)
        y = nb[:, p].ravel()
        z = nb[:, q].ravel()
        e1 = ed[:, p].ravel()
        e2 = ed[:, q].ravel()
        if pair_policy == "same-fiber":
            keep = net.edge_fiber[e1] == net.edge_fiber[e2]
            x, y, z, e1, e2 = x[keep], y[keep], z[keep], e1[keep], e2[keep]
        xs.append(x), ys.append(y), zs.append(z), e1s.append(e1), e2s.append(e2)
    if not xs:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty, empty.copy(), empty.copy()
    return (np.concatenate(xs), np.concatenate(ys), np.concatenate(zs),
            np.concatenate(e1s), np.concatenate(e2s))


def _unit3(net: SpatialNetwork, frm, to, length) -> np.ndarray:
    d = np.zeros((frm.size, 3))
    d[:, :net.dimension] = (net.coords[frm] - net.coords[to]) / length[:, None]
    return d


def _pair_normals(d1: np.ndarray, d2: np.ndarray):
    """Deflection directions for a neighbor pair.

    The primary direction is the unit normal of the plane spanned by the two
    edge directions. For (near-)collinear pairs any normal direction works;
    we take the cross product with the first coordinate axis that is not
    parallel to the pair axis, which keeps the choice deterministic.
    The secondary directions rotate the primary one into the plane,
    separately for each edge.
    """
    c = np.cross(d1, d2)
    nc = np.linalg.norm(c, axis=1)
    collinear = nc <= COLLINEAR_TOL
    eta1 = np.empty_like(c)
    ok = ~collinear
    eta1[ok] = c[ok] / nc[ok, None]
    if np.any(collinear):
        dc = d1[collinear]
        c1 = np.cross(dc, np.array([1.0, 0.0, 0.0]))
        n1 = np.linalg.norm(c1, axis=1)
        c2 = np.cross(dc, np.array([0.0, 1.0, 0.0]))
        pick = np.where((n1 > COLLINEAR_TOL)[:, None], c1, c2)
        eta1[collinear] = pick / np.linalg.norm(pick, axis=1)[:, None]
    eta_y2 = np.cross(d1, eta1)
    eta_z2 = np.cross(d2, eta1)
    return eta1, eta_y2, eta_z2


def _pair_weights(l1, l2, pair_stiffness, bending_modulus):
    if (pair_stiffness is None) == (bending_modulus is None):
        raise ConfigError("give exactly one of pair_stiffness and "
                          "bending_modulus")
    lsum = l1 + l2
    if pair_stiffness is not None:
        gamma = np.broadcast_to(np.asarray(pair_stiffness, dtype=np.float64),
                                l1.shape)
    else:
        gamma = float(bending_modulus) / (lsum * lsum)
    return gamma * lsum / 2.0


def assemble_bending_matrix(net: SpatialNetwork, pair_stiffness=None,
                            bending_modulus=None,
                            pair_policy: str = "all") -> sp.csr_matrix:
    """Bending stiffness over three displacement components.

    Pass either ``pair_stiffness`` (a coefficient applied to every neighbor
    pair) or ``bending_modulus`` (flexural rigidity; the pair coefficient is
    then modulus / (l1 + l2)**2).
    """
    n = net.nnodes
    x, y, z, e1, e2 = neighbor_pairs(net, pair_policy)
    upper = sp.csr_matrix((3 * n, 3 * n))
    for lo in range(0, x.size, _PAIR_CHUNK):
        sl = slice(lo, min(lo + _PAIR_CHUNK, x.size))
        xs, ys, zs = x[sl], y[sl], z[sl]
        l1 = net.edge_lengths[e1[sl]]
        l2 = net.edge_lengths[e2[sl]]
        w = _pair_weights(l1, l2, pair_stiffness, bending_modulus)
        d1 = _unit3(net, xs, ys, l1)
        d2 = _unit3(net, xs, zs, l2)
        eta1, eta_y2, eta_z2 = _pair_normals(d1, d2)

        dofs = np.empty((xs.size, 9), dtype=np.int64)
        for a in range(3):
            dofs[:, 3 * a] = a * n + xs
            dofs[:, 3 * a + 1] = a * n + ys
            dofs[:, 3 * a + 2] = a * n + zs
        rows = np.broadcast_to(dofs[:, :, None], (xs.size, 9, 9))
        cols = np.broadcast_to(dofs[:, None, :], (xs.size, 9, 9))
        keep = rows <= cols

        for mode_y, mode_z in ((eta1, eta1), (eta_y2, eta_z2)):
            cy = mode_y / l1[:, None]
            cz = mode_z / l2[:, None]
            cx = -(cy + cz)
            vals = np.empty((xs.size, 9))
            for a in range(3):
                vals[:, 3 * a] = cx[:, a]
                vals[:, 3 * a + 1] = cy[:, a]
                vals[:, 3 * a + 2] = cz[:, a]
            entries = w[:, None, None] * vals[:, :, None] * vals[:, None, :]
            upper = upper + sp.coo_matrix(
                (entries[keep], (rows[keep], cols[keep])),
                shape=(3 * n, 3 * n)).tocsr()
    return _mirror_upper(upper)


def bending_energy(net: SpatialNetwork, field, pair_stiffness=None,
                   bending_modulus=None, pair_policy: str = "all") -> float:
    """Bending energy evaluated pair by pair in difference form; constant
    fields give an exact zero."""
    comps = _pad3(net, field)
    x, y, z, e1, e2 = neighbor_pairs(net, pair_policy)
    if x.size == 0:
        return 0.0
    l1 = net.edge_lengths[e1]
    l2 = net.edge_lengths[e2]
    w = _pair_weights(l1, l2, pair_stiffness, bending_modulus)
    d1 = _unit3(net, x, y, l1)
    d2 = _unit3(net, x, z, l2)
    eta1, eta_y2, eta_z2 = _pair_normals(d1, d2)
    dy = (comps[:, y] - comps[:, x]).T
    dz = (comps[:, z] - comps[:, x]).T
    total = 0.0
    for mode_y, mode_z in ((eta1, eta1), (eta_y2, eta_z2)):
        g = (np.einsum("pa,pa->p", mode_y, dy) / l1
             + np.einsum("pa,pa->p", mode_z, dz) / l2)
        total += float(np.sum(w * g * g))
    return total


# ----------------------------------------------------------------------
# assembled operators with Dirichlet elimination


def write_coordinate_matrix(matrix, path) -> None:
    """Write a sparse matrix as plain text triplets.

    First line is ``nrows ncols nnz``; every following line is one stored
    entry as 0-based ``row col value`` in row-major order. Values use
    shortest round-trip decimals, so reading the file back reproduces the
    matrix exactly.
    """
    m = sp.csr_matrix(matrix).copy()
    m.sum_duplicates()
    m.sort_indices()
    coo = m.tocoo()
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{m.shape[0]} {m.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {float(v)!r}\n")


class AssembledOperator:
    """A stiffness matrix over the full dof set plus the free-dof machinery.

    Dofs are component-major: dof = component * nnodes + node. Free dofs
    are the non-Dirichlet nodes of every component, in component order.
    At least one Dirichlet node is required; without one the reduced
    matrix is singular for both models.
    """

    def __init__(self, net: SpatialNetwork, matrix: sp.csr_matrix,
                 ncomp: int, kind: str, info: dict | None = None):
        mask = net.dirichlet_mask
        if not mask.any():
            raise OperatorSingularError(
                "the model needs at least one node on a Dirichlet face")
        self.net = net
        self.matrix = matrix
        self.ncomp = ncomp
        self.kind = kind
        self.info = dict(info or {})
        free_nodes = np.flatnonzero(~mask)
        self.free_nodes = free_nodes
        self.free_dofs = (np.arange(ncomp)[:, None] * net.nnodes
                          + free_nodes[None, :]).ravel()
        self.matrix_free = matrix[self.free_dofs][:, self.free_dofs].tocsr()

    @property
    def ndofs(self) -> int:
        return self.ncomp * self.net.nnodes

    @property
    def ndofs_free(self) -> int:
        return self.free_dofs.size

    def flatten_field(self, field) -> np.ndarray:
        comps = self.net.as_components(field)
        if comps.shape[0] != self.ncomp:
            raise ShapeError(f"field has {comps.shape[0]} components, "
                             f"operator has {self.ncomp}")
        return np.ascontiguousarray(comps).reshape(-1)

    def unflatten(self, flat) -> np.ndarray:
        return np.asarray(flat).reshape(self.ncomp, self.net.nnodes)

    def mass_load(self, field) -> np.ndarray:
        """Dual vector of a node field: componentwise mass application,
        flattened. A scalar means that constant in every component."""
        v = np.asarray(field, dtype=np.float64)
        if v.ndim == 0:
            v = np.full((self.ncomp, self.net.nnodes), float(v))
        comps = self.net.as_components(v)
        if comps.shape[0] != self.ncomp:
            raise ShapeError("load field component count mismatch")
        return (comps * self.net.mass).reshape(-1)

    def reduced_rhs(self, load_flat, lifted=None) -> np.ndarray:
        """Right-hand side of the free-dof system for a load vector and an
        arbitrary extension of the Dirichlet data."""
        b = np.asarray(load_flat, dtype=np.float64)
        if lifted is not None:
            b = b - self.matrix @ np.asarray(lifted, dtype=np.float64)
        return b[self.free_dofs]

    def expand(self, u_free, lifted=None) -> np.ndarray:
        """Full component-major solution from free-dof values plus the
        lifted Dirichlet extension."""
        full = (np.zeros(self.ndofs) if lifted is None
                else np.array(lifted, dtype=np.float64))
        full[self.free_dofs] += np.asarray(u_free, dtype=np.float64)
        return full


def heat_operator(net: SpatialNetwork, conductivity=None) -> AssembledOperator:
    g = resolve_conductivity(net, conductivity)
    matrix = assemble_heat_matrix(net, g)
    info = {"coefficient_min": float(g.min()), "coefficient_max": float(g.max())}
    return AssembledOperator(net, matrix, 1, "heat", info)


def structural_operator(net: SpatialNetwork, ncomp: int,
                        params: StructuralParams | None = None,
                        gamma1=None, pair_stiffness=None,
                        bending_modulus=None,
                        pair_policy: str = "all") -> AssembledOperator:
    """Tensile plus bending operator with 2 or 3 displacement components.

    Coefficients come from ``params`` unless given explicitly. The
    two-component variant assembles the three-component matrix and keeps
    its leading principal block.
    """
    if ncomp not in (2, 3):
        raise ConfigError("structural models use 2 or 3 components")
    if ncomp == 3 and net.dimension == 3:
        pass
    elif net.dimension == 2:
        pass
    else:
        raise ConfigError("a 3d network needs 3 displacement components")
    if params is not None:
        if gamma1 is None:
            gamma1 = params.tensile_stiffness
        if pair_stiffness is None and bending_modulus is None:
            bending_modulus = params.bending_modulus
    if gamma1 is None:
        raise ConfigError("tensile coefficient missing: give params or gamma1")

    k3 = (assemble_tensile_matrix(net, gamma1)
          + assemble_bending_matrix(net, pair_stiffness=pair_stiffness,
                                    bending_modulus=bending_modulus,
                                    pair_policy=pair_policy))
    n = net.nnodes
    matrix = k3 if ncomp == 3 else k3[:2 * n, :2 * n].tocsr()
    info = {"gamma1": gamma1 if np.ndim(gamma1) == 0 else "per-edge",
            "pair_policy": pair_policy}
    return AssembledOperator(net, matrix, ncomp, "structural", info)
