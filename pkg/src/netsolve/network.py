"""Spatial network data model and the mass / graph-Laplacian operators.

A spatial network is a connected graph whose nodes carry coordinates inside
an axis-aligned box domain and whose edges carry their Euclidean lengths.
Two operators act on node fields:

* the mass operator M, a diagonal operator assigning each node half the
  total length of its incident edges, and
* the weighted graph Laplacian L, whose quadratic form sums squared edge
  differences divided by edge length.

Both come with subdomain-restricted quadratic forms: the subdomain variant
sums node contributions over a node subset, so an edge with one endpoint
inside the subset still contributes its half-term from the inside node.

Vector fields with n components are stored component-major: a field is an
array of shape (n, nnodes) (scalar fields may be plain (nnodes,) arrays).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import NetworkDisconnectedError, NetworkInvalidError, ShapeError

# Relative tolerance for deciding that a coordinate lies on a domain face.
BOUNDARY_RTOL = 1e-12

# Face tokens accepted in files and on the command line, per axis and side.
_AXIS_LETTERS = "xyz"


def face_token(axis: int, side: int) -> str:
    """Return the canonical token for a domain face, e.g. (0, 1) -> 'xmax'."""
    return _AXIS_LETTERS[axis] + ("min" if side == 0 else "max")


def parse_face_token(token: str) -> tuple[int, int]:
    """Inverse of face_token. Raises ValueError on an unknown token."""
    t = token.strip().lower()
    if len(t) == 4 and t[0] in _AXIS_LETTERS and t[1:] in ("min", "max"):
        return _AXIS_LETTERS.index(t[0]), 0 if t[1:] == "min" else 1
    raise ValueError(f"unknown face token {token!r}")


def all_faces(dimension: int) -> tuple[tuple[int, int], ...]:
    """All 2*d faces of a d-dimensional box domain."""
    return tuple((a, s) for a in range(dimension) for s in (0, 1))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box used as a subdomain.

    Membership follows the half-open convention: a point belongs to the box
    when lo <= x < hi on every axis, except that the upper boundary is
    included on axes where the box's upper face coincides with the domain
    boundary. That makes any regular grid of boxes a true partition of the
    domain.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    @classmethod
    def from_center(cls, center: Sequence[float], half_width: float) -> "Box":
        c = np.asarray(center, dtype=float)
        return cls(tuple(c - half_width), tuple(c + half_width))

    def contains(self, points: np.ndarray, domain: Sequence[float]) -> np.ndarray:
        """Boolean membership mask for an array of points, shape (npts, d)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        dom = np.asarray(domain, dtype=float)
        mask = np.all(pts >= lo, axis=1)
        at_domain_top = hi >= dom * (1.0 - BOUNDARY_RTOL)
        upper = np.where(at_domain_top, pts <= hi, pts < hi)
        return mask & np.all(upper, axis=1)


class SpatialNetwork:
    """Immutable embedded graph with cached lengths, masses and adjacency.

    Parameters
    ----------
    coords : (N, d) array of node positions inside the closed domain box.
    edges : (E, 2) integer array of unordered node pairs; stored in
        canonical form (small index first, rows sorted lexicographically).
    domain : side lengths (l_1, .., l_d) of the domain box.
    dirichlet_faces : iterable of (axis, side) pairs declaring the Dirichlet
        boundary as a union of domain faces; side 0 is the min face, 1 the
        max face. A node is a Dirichlet node when its coordinate lies on a
        declared face within 1e-12 relative to that axis extent.
    edge_fiber : optional (E,) integer array of fiber ids (generator output).
    edge_weight : optional (E,) positive array of per-edge weights, used as
        default conductivities by the heat model.
    require_connected : when True (default) a disconnected graph raises
        NetworkDisconnectedError. Audit tests that need broken networks
        pass False.
    """

    def __init__(self, coords, edges, domain, dirichlet_faces=(),
                 edge_fiber=None, edge_weight=None, require_connected=True):
        coords = np.ascontiguousarray(coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] not in (2, 3):
            raise ShapeError("coords must have shape (N, d) with d in {2, 3}")
        if not np.all(np.isfinite(coords)):
            raise NetworkInvalidError("coords contain non-finite values")
        domain = np.asarray(domain, dtype=np.float64)
        if domain.shape != (coords.shape[1],) or np.any(domain <= 0):
            raise ShapeError("domain must give one positive side length per axis")
        if np.any(coords < -0.0) or np.any(coords > domain):
            raise NetworkInvalidError("node coordinates outside the closed domain box")

        edges = np.asarray(edges, dtype=np.int64)
        if edges.ndim != 2 or edges.shape[1] != 2:
            raise ShapeError("edges must have shape (E, 2)")
        n = coords.shape[0]
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise NetworkInvalidError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise NetworkInvalidError("self-loops are not allowed")

        # canonical edge order: sorted pair, rows lexicographic
        edges = np.sort(edges, axis=1)
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        edges = edges[order]
        if edges.shape[0] > 1:
            dup = np.all(edges[1:] == edges[:-1], axis=1)
            if np.any(dup):
                raise NetworkInvalidError("duplicate edges are not allowed")

        self.coords = coords
        self.edges = edges
        self.domain = domain
        faces = []
        for f in dirichlet_faces:
            if isinstance(f, str):
                try:
                    faces.append(parse_face_token(f))
                except ValueError as exc:
                    raise NetworkInvalidError(str(exc)) from None
            else:
                a, s = f
                faces.append((int(a), int(s)))
        self.dirichlet_faces = tuple(faces)
        for a, s in self.dirichlet_faces:
            if not (0 <= a < coords.shape[1]) or s not in (0, 1):
                raise NetworkInvalidError(f"invalid Dirichlet face ({a}, {s})")

        if edge_fiber is not None:
            edge_fiber = np.asarray(edge_fiber, dtype=np.int64)[order]
            if edge_fiber.shape != (edges.shape[0],):
                raise ShapeError("edge_fiber length mismatch")
        if edge_weight is not None:
            edge_weight = np.asarray(edge_weight, dtype=np.float64)[order]
            if edge_weight.shape != (edges.shape[0],):
                raise ShapeError("edge_weight length mismatch")
            if np.any(edge_weight <= 0):
                raise NetworkInvalidError("edge weights must be positive")
        self.edge_fiber = edge_fiber
        self.edge_weight = edge_weight

        diff = coords[edges[:, 0]] - coords[edges[:, 1]]
        self.edge_lengths = np.sqrt(np.sum(diff * diff, axis=1))
        if np.any(self.edge_lengths <= 0.0):
            raise NetworkInvalidError("zero-length edge (coincident endpoints)")

        # node mass: half the total incident edge length
        m = np.zeros(n)
        np.add.at(m, edges[:, 0], 0.5 * self.edge_lengths)
        np.add.at(m, edges[:, 1], 0.5 * self.edge_lengths)
        self.mass = m

        self._adjacency = self._build_adjacency()
        ncomp, _ = self.count_components()
        if require_connected and ncomp != 1:
            raise NetworkDisconnectedError(
                f"network has {ncomp} connected components; expected 1")
        self._laplacian = None

    # ------------------------------------------------------------------
    # basic properties

    @property
    def nnodes(self) -> int:
        return self.coords.shape[0]

    @property
    def nedges(self) -> int:
        return self.edges.shape[0]

    @property
    def dimension(self) -> int:
        return self.coords.shape[1]

    @property
    def total_edge_length(self) -> float:
        return float(self.edge_lengths.sum())

    @property
    def max_edge_length(self) -> float:
        return float(self.edge_lengths.max()) if self.nedges else 0.0

    def _build_adjacency(self):
        e = self.edges
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        eid = np.concatenate([np.arange(self.nedges)] * 2)
        order = np.argsort(src, kind="stable")
        indptr = np.zeros(self.nnodes + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        np.cumsum(indptr, out=indptr)
        return indptr, dst[order], eid[order]

    def neighbors(self, node: int) -> tuple[np.ndarray, np.ndarray]:
        """Neighbor node ids and the corresponding edge ids of one node."""
        indptr, nbr, eid = self._adjacency
        return nbr[indptr[node]:indptr[node + 1]], eid[indptr[node]:indptr[node + 1]]

    @property
    def adjacency(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(indptr, neighbor, edge_id) arrays in CSR layout."""
        return self._adjacency

    def count_components(self):
        """Connected-component count plus per-node labels for diagnostics."""
        n = self.nnodes
        if n == 0:
            return 0, np.empty(0, dtype=np.int32)
        data = np.ones(2 * self.nedges, dtype=np.int8)
        e = self.edges
        g = sp.coo_matrix(
            (data, (np.concatenate([e[:, 0], e[:, 1]]),
                    np.concatenate([e[:, 1], e[:, 0]]))), shape=(n, n))
        ncomp, labels = connected_components(g.tocsr(), directed=False)
        return int(ncomp), labels

    def is_connected(self) -> bool:
        return self.count_components()[0] == 1

    # ------------------------------------------------------------------
    # Dirichlet boundary

    @cached_property
    def dirichlet_mask(self) -> np.ndarray:
        """Boolean mask of nodes lying on a declared Dirichlet face."""
        mask = np.zeros(self.nnodes, dtype=bool)
        for axis, side in self.dirichlet_faces:
            target = 0.0 if side == 0 else self.domain[axis]
            tol = BOUNDARY_RTOL * self.domain[axis]
            mask |= np.abs(self.coords[:, axis] - target) <= tol
        return mask

    def with_dirichlet_faces(self, faces: Iterable[tuple[int, int]]) -> "SpatialNetwork":
        """Copy of this network with a different Dirichlet declaration."""
        return SpatialNetwork(self.coords, self.edges, self.domain,
                              dirichlet_faces=faces, edge_fiber=self.edge_fiber,
                              edge_weight=self.edge_weight, require_connected=False)

    # ------------------------------------------------------------------
    # fields and subdomains

    def as_components(self, field) -> np.ndarray:
        """View a field as (ncomp, nnodes); accepts (N,) or (n, N) input."""
        v = np.asarray(field, dtype=np.float64)
        if v.ndim == 1:
            if v.shape[0] != self.nnodes:
                raise ShapeError(f"field has {v.shape[0]} values, network has "
                                 f"{self.nnodes} nodes")
            return v.reshape(1, -1)
        if v.ndim == 2 and v.shape[1] == self.nnodes:
            return v
        raise ShapeError(f"field shape {v.shape} does not match node count "
                         f"{self.nnodes}")

    def field_in_admissible_space(self, field) -> bool:
        """True when the field vanishes at every Dirichlet node."""
        comps = self.as_components(field)
        mask = self.dirichlet_mask
        return bool(np.all(comps[:, mask] == 0.0))

    def _subdomain_mask(self, where) -> np.ndarray | None:
        if where is None:
            return None
        if isinstance(where, Box):
            return where.contains(self.coords, self.domain)
        idx = np.asarray(where)
        if idx.dtype == bool:
            if idx.shape != (self.nnodes,):
                raise ShapeError("subdomain mask length mismatch")
            return idx
        mask = np.zeros(self.nnodes, dtype=bool)
        mask[idx] = True
        return mask

    def box_nodes(self, box: Box) -> np.ndarray:
        """Indices of nodes inside a box under the half-open convention."""
        return np.flatnonzero(box.contains(self.coords, self.domain))

    # ------------------------------------------------------------------
    # quadratic forms and matvecs

    def mass_quadratic(self, field, where=None) -> float:
        """|v|^2 over a subdomain: sum over nodes of mass(x) * v(x)^2,
        summed over components for vector fields."""
        comps = self.as_components(field)
        mask = self._subdomain_mask(where)
        m = self.mass if mask is None else self.mass * mask
        return float(np.einsum("j,cj,cj->", m, comps, comps))

    def laplacian_quadratic(self, field, where=None) -> float:
        """Graph-Laplacian energy over a subdomain.

        Each node in the subdomain contributes half of every incident edge
        term (v(x) - v(y))^2 / |x - y|, so an edge with exactly one endpoint
        inside still shows up with half weight. Over the whole network this
        equals the sum of full edge terms.
        """
        comps = self.as_components(field)
        e = self.edges
        d = comps[:, e[:, 0]] - comps[:, e[:, 1]]
        terms = np.sum(d * d, axis=0) / self.edge_lengths
        mask = self._subdomain_mask(where)
        if mask is None:
            return float(terms.sum())
        half = 0.5 * terms
        return float(half[mask[e[:, 0]]].sum() + half[mask[e[:, 1]]].sum())

    def mass_norm(self, field, where=None) -> float:
        return float(np.sqrt(self.mass_quadratic(field, where)))

    def laplacian_norm(self, field, where=None) -> float:
        return float(np.sqrt(self.laplacian_quadratic(field, where)))

    def apply_mass(self, field) -> np.ndarray:
        """Apply the diagonal mass operator; output shape follows the input."""
        comps = self.as_components(field)
        out = comps * self.mass
        return out.reshape(np.asarray(field).shape)

    def laplacian_matrix(self) -> sp.csr_matrix:
        """The weighted graph Laplacian as a CSR matrix (cached)."""
        if self._laplacian is None:
            e = self.edges
            w = 1.0 / self.edge_lengths
            i = np.concatenate([e[:, 0], e[:, 1], e[:, 0], e[:, 1]])
            j = np.concatenate([e[:, 0], e[:, 1], e[:, 1], e[:, 0]])
            v = np.concatenate([w, w, -w, -w])
            self._laplacian = sp.coo_matrix((v, (i, j)),
                                            shape=(self.nnodes, self.nnodes)).tocsr()
        return self._laplacian

    def apply_laplacian(self, field) -> np.ndarray:
        comps = self.as_components(field)
        out = (self.laplacian_matrix() @ comps.T).T
        return np.ascontiguousarray(out).reshape(np.asarray(field).shape)
