"""Uniform box meshes over the domain and the multilinear coarse basis.

The mesh partitions the domain into cubic elements of side ``spacing``;
the spacing must divide every domain side length exactly. Each network
node belongs to exactly one element under the half-open convention (the
upper domain faces close the last element on each axis).

Mesh vertices are numbered free-first: vertices lying on a declared
Dirichlet face come last, so the leading ``nfree`` columns of the basis
matrix span the admissible coarse space.

Patches are axis-aligned ranges of element indices:

* around a vertex with multi-index j and halo k: elements in
  [j - k, j + k - 1], clipped to the element grid;
* around an element e and halo k: elements in [e - k, e + k], clipped.

With halo 1 every element lies in exactly 2**d vertex patches.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import AssumptionViolation, ConfigError, ShapeError
from .network import SpatialNetwork

SPACING_RTOL = 1e-9


def multilinear_corner_weights(local: np.ndarray) -> np.ndarray:
    """Multilinear nodal weights at local element coordinates.

    ``local`` has shape (npts, d) with entries in [0, 1]. The result has
    shape (npts, 2**d); corners are enumerated with the first axis varying
    fastest, so in 2D the order is (0,0), (1,0), (0,1), (1,1) and the point
    (0.1, 0.2) gets weights (0.72, 0.08, 0.18, 0.02).
    """
    local = np.atleast_2d(np.asarray(local, dtype=float))
    npts, d = local.shape
    out = np.ones((npts, 1 << d))
    for c in range(1 << d):
        for a in range(d):
            out[:, c] *= local[:, a] if (c >> a) & 1 else 1.0 - local[:, a]
    return out


class BoxMesh:
    """Structured mesh of cubic elements with free-first vertex numbering."""

    def __init__(self, domain, spacing: float, dirichlet_faces=()):
        domain = np.asarray(domain, dtype=float)
        if domain.ndim != 1 or domain.size not in (2, 3) or np.any(domain <= 0):
            raise ConfigError("domain must give 2 or 3 positive side lengths")
        if not spacing > 0:
            raise ConfigError("mesh spacing must be positive")
        ratio = domain / spacing
        nelem = np.rint(ratio).astype(np.int64)
        if np.any(nelem < 1) or np.any(
                np.abs(ratio - nelem) > SPACING_RTOL * np.maximum(ratio, 1.0)):
            raise ConfigError(f"mesh spacing {spacing!r} does not evenly divide "
                              f"domain sides {tuple(domain)}")

        self.domain = domain
        self.spacing = float(spacing)
        self.nelem = nelem
        self.nvert = nelem + 1
        self.dimension = domain.size
        self.nelem_total = int(np.prod(nelem))
        self.nvert_total = int(np.prod(self.nvert))
        self.dirichlet_faces = tuple((int(a), int(s)) for a, s in dirichlet_faces)

        # raw vertex order is C-order over multi-indices; permute free-first
        grids = np.meshgrid(*[np.arange(nv) for nv in self.nvert], indexing="ij")
        raw_multi = np.stack([g.ravel() for g in grids], axis=1)
        constrained = np.zeros(self.nvert_total, dtype=bool)
        for axis, side in self.dirichlet_faces:
            if not (0 <= axis < self.dimension) or side not in (0, 1):
                raise ConfigError(f"invalid Dirichlet face ({axis}, {side})")
            target = 0 if side == 0 else nelem[axis]
            constrained |= raw_multi[:, axis] == target
        order = np.concatenate([np.flatnonzero(~constrained),
                                np.flatnonzero(constrained)])
        self.nfree = int((~constrained).sum())
        self.vertex_multi = raw_multi[order]
        self._ordered_of_raw = np.empty(self.nvert_total, dtype=np.int64)
        self._ordered_of_raw[order] = np.arange(self.nvert_total)

    # ------------------------------------------------------------------

    @property
    def vertex_coords(self) -> np.ndarray:
        """Vertex positions in free-first order, shape (nvert_total, d)."""
        return self.vertex_multi * self.spacing

    def vertex_id(self, multi) -> int:
        """Free-first vertex id of a vertex multi-index."""
        raw = int(np.ravel_multi_index(tuple(np.asarray(multi)), tuple(self.nvert)))
        return int(self._ordered_of_raw[raw])

    def vertex_ids_of_raw_multi(self, multi_rows: np.ndarray) -> np.ndarray:
        raw = np.ravel_multi_index(tuple(multi_rows.T), tuple(self.nvert))
        return self._ordered_of_raw[raw]

    def element_of_points(self, points: np.ndarray) -> np.ndarray:
        """Element multi-index of each point, half-open boxes with the last
        element closed at the domain top. Shape (npts, d)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        em = np.floor(pts / self.spacing).astype(np.int64)
        np.clip(em, 0, self.nelem - 1, out=em)
        return em

    def element_flat(self, multi_rows: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.atleast_2d(multi_rows).T),
                                    tuple(self.nelem))

    def elements_in_range(self, lo, hi) -> np.ndarray:
        """Flat ids of all elements with lo <= multi <= hi (inclusive)."""
        axes = [np.arange(l, h + 1) for l, h in zip(lo, hi)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.ravel_multi_index(tuple(g.ravel() for g in grids),
                                    tuple(self.nelem))

    def vertex_patch_range(self, vertex_id: int, halo: int = 1):
        """Clipped element-index range [lo, hi] of a vertex patch."""
        multi = self.vertex_multi[vertex_id]
        lo = np.maximum(multi - halo, 0)
        hi = np.minimum(multi + halo - 1, self.nelem - 1)
        return lo, hi

    def element_patch_range(self, elem_multi, halo: int = 1):
        """Clipped element-index range [lo, hi] of an element patch."""
        multi = np.asarray(elem_multi)
        lo = np.maximum(multi - halo, 0)
        hi = np.minimum(multi + halo, self.nelem - 1)
        return lo, hi

    def describe(self) -> dict:
        return {
            "spacing": self.spacing,
            "elements_per_axis": [int(k) for k in self.nelem],
            "vertices_per_axis": [int(k) for k in self.nvert],
            "total_elements": self.nelem_total,
            "total_vertices": self.nvert_total,
            "free_vertices": self.nfree,
        }


class BasisRestriction:
    """Multilinear mesh basis sampled at network nodes, plus the companion
    quasi-interpolation onto the mesh.

    ``basis`` is the sparse (nnodes, nvert_total) matrix of vertex hat
    functions evaluated at node positions; its rows sum to one. The
    quasi-interpolant assigns vertex k the mass-weighted average of the
    field over the element obtained by clipping k's multi-index into the
    element grid, then evaluates the multilinear extension back at the
    nodes.

    Every element must contain network mass; an empty element makes the
    averaging (and the two-level method built on it) meaningless, so it
    raises AssumptionViolation up front.
    """

    def __init__(self, net: SpatialNetwork, mesh: BoxMesh,
                 require_covered: bool = True):
        if net.dimension != mesh.dimension:
            raise ShapeError("network and mesh dimension differ")
        if not np.allclose(net.domain, mesh.domain):
            raise ShapeError("network and mesh domain differ")
        self.net = net
        self.mesh = mesh

        em = mesh.element_of_points(net.coords)
        self.node_element_multi = em
        self.node_element = np.ravel_multi_index(tuple(em.T), tuple(mesh.nelem))

        local = net.coords / mesh.spacing - em
        weights = multilinear_corner_weights(local)
        d = mesh.dimension
        cols = np.empty((net.nnodes, 1 << d), dtype=np.int64)
        for c in range(1 << d):
            corner = np.fromiter(((c >> a) & 1 for a in range(d)), dtype=np.int64)
            cols[:, c] = mesh.vertex_ids_of_raw_multi(em + corner)
        rows = np.repeat(np.arange(net.nnodes), 1 << d)
        self.basis = sp.coo_matrix(
            (weights.ravel(), (rows, cols.ravel())),
            shape=(net.nnodes, mesh.nvert_total)).tocsr()

        counts = np.bincount(self.node_element, minlength=mesh.nelem_total)
        self.element_mass = np.bincount(self.node_element, weights=net.mass,
                                        minlength=mesh.nelem_total)
        if require_covered and np.any(self.element_mass <= 0.0):
            bad = int(np.argmin(self.element_mass))
            multi = np.unravel_index(bad, tuple(mesh.nelem))
            raise AssumptionViolation(
                f"mesh element {tuple(int(k) for k in multi)} contains no "
                f"network mass; increase the mesh spacing so every element "
                f"covers part of the network")

        # node lists grouped by element, and a first-axis sort for patches
        self._node_order = np.argsort(self.node_element, kind="stable")
        self._elem_offsets = np.concatenate(
            [[0], np.cumsum(counts)]).astype(np.int64)
        order = np.argsort(net.coords[:, 0], kind="stable")
        self._axis_sorted = (net.coords[order, 0], order)

        # element associated with each vertex: clip the vertex multi-index
        vm = np.minimum(self.mesh.vertex_multi, self.mesh.nelem - 1)
        self.vertex_element = np.ravel_multi_index(tuple(vm.T), tuple(mesh.nelem))

    # ------------------------------------------------------------------

    def describe(self) -> dict:
        """Mesh summary extended with how the network populates it."""
        counts = np.diff(self._elem_offsets)
        out = self.mesh.describe()
        out["nodes_per_element_min"] = int(counts.min())
        out["nodes_per_element_max"] = int(counts.max())
        out["nodes_per_element"] = [int(c) for c in counts]
        return out

    def nodes_in_elements(self, elem_ids) -> np.ndarray:
        """Network node ids contained in the given flat element ids."""
        off = self._elem_offsets
        parts = [self._node_order[off[e]:off[e + 1]] for e in np.atleast_1d(elem_ids)]
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(parts)

    def patch_nodes(self, vertex_id: int, halo: int = 1) -> np.ndarray:
        """Network nodes interior to the element patch around a mesh vertex.

        The patch region spans ``halo`` elements per side. Interior patch
        faces are open: a node sitting exactly on one carries a zero value
        of every mesh function supported on the patch, so keeping it would
        only couple neighboring patches without enlarging the local space.
        Faces on the domain boundary are closed, so a patch reaching the
        boundary keeps the nodes sitting exactly on it.
        """
        center = self.mesh.vertex_multi[vertex_id] * self.mesh.spacing
        reach = halo * self.mesh.spacing
        coords = self.net.coords
        tol = SPACING_RTOL * self.mesh.domain

        lo0, hi0 = center[0] - reach, center[0] + reach
        xs, order = self._axis_sorted
        start = 0 if lo0 <= tol[0] else int(np.searchsorted(xs, lo0, "right"))
        stop = (xs.size if hi0 >= self.mesh.domain[0] - tol[0]
                else int(np.searchsorted(xs, hi0, "left")))
        nodes = order[start:stop]

        for a in range(1, self.mesh.dimension):
            lo, hi = center[a] - reach, center[a] + reach
            vals = coords[nodes, a]
            keep = np.ones(nodes.size, dtype=bool)
            if lo > tol[a]:
                keep &= vals > lo
            if hi < self.mesh.domain[a] - tol[a]:
                keep &= vals < hi
            nodes = nodes[keep]
        return np.sort(nodes)

    def coarse_values(self, field) -> np.ndarray:
        """Mass-weighted element averages assigned to mesh vertices.

        Returns shape (ncomp, nvert_total)."""
        comps = self.net.as_components(field)
        sums = np.empty((comps.shape[0], self.mesh.nelem_total))
        mv = self.net.mass * comps
        for c in range(comps.shape[0]):
            sums[c] = np.bincount(self.node_element, weights=mv[c],
                                  minlength=self.mesh.nelem_total)
        return sums[:, self.vertex_element] / self.element_mass[self.vertex_element]

    def interpolate(self, field, free_only: bool = False) -> np.ndarray:
        """Quasi-interpolant of a node field, evaluated at the nodes.

        With ``free_only`` the coefficients at constrained vertices are
        zeroed, which keeps the result in the admissible space."""
        c = self.coarse_values(field)
        if free_only:
            c = c.copy()
            c[:, self.mesh.nfree:] = 0.0
        out = (self.basis @ c.T).T
        return np.ascontiguousarray(out).reshape(np.asarray(field).shape)
