"""Numerical audits of the structural assumptions on a spatial network.

The two-level solver's convergence rate rests on two measurable properties,
checked over a partition of the domain into ``divisions`` boxes per axis:

* homogeneity: the network mass per unit volume is comparable across
  boxes. The scan reports each box's mass density, their max/min ratio
  (the homogeneity ratio), and the smallest density.
* locality / connectivity: the part of the network meeting each box can
  be connected using only edges near the box, and admits a Poincare
  inequality whose constant scales with the box side. The scan builds each
  box's subgraph, stitches it together through a grown box when needed,
  and computes the smallest nontrivial eigenvalue of the subgraph's
  Laplacian/mass pencil. The per-box constant is
  ``mu = 1 / (side * sqrt(lambda2))``; the network-level constant is the
  maximum over boxes.

Boxes whose subgraph touches the Dirichlet boundary also get the smallest
eigenvalue of the pencil with the boundary nodes eliminated (``lambda1``),
reported for diagnosis; the headline constant stays lambda2-based.

A box whose subgraph cannot be connected within the grown box is a
violation: it is flagged in the scan result rather than raised, so a whole
scan can finish and report every offending box.
"""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .errors import EigenSolveError
from .network import Box, SpatialNetwork

_DENSE_CUTOFF = 5
_RITZ_BLOCK = 3


# ----------------------------------------------------------------------
# homogeneity


@dataclass
class HomogeneityResult:
    divisions: int
    box_volume: float
    values: np.ndarray            # mass density per box, C-order over multi-indices
    sigma_hat: float              # max/min density ratio; inf with empty boxes
    rho_hat: float                # smallest density
    empty_boxes: list = field(default_factory=list)


def box_multi_of_nodes(net: SpatialNetwork, divisions: int) -> np.ndarray:
    """Box multi-index of every node under the half-open convention."""
    widths = net.domain / divisions
    multi = np.floor(net.coords / widths).astype(np.int64)
    np.clip(multi, 0, divisions - 1, out=multi)
    return multi


def homogeneity_scan(net: SpatialNetwork, divisions: int) -> HomogeneityResult:
    """Mass density per box and the homogeneity ratio of the partition."""
    d = net.dimension
    multi = box_multi_of_nodes(net, divisions)
    flat = np.ravel_multi_index(tuple(multi.T), (divisions,) * d)
    nboxes = divisions ** d
    masses = np.bincount(flat, weights=net.mass, minlength=nboxes)
    volume = float(np.prod(net.domain / divisions))
    values = masses / volume
    vmin = float(values.min())
    vmax = float(values.max())
    empty = [int(k) for k in np.flatnonzero(values == 0.0)]
    sigma = np.inf if vmin == 0.0 else vmax / vmin
    return HomogeneityResult(divisions, volume, values, float(sigma), vmin, empty)


# ----------------------------------------------------------------------
# pencil eigensolver


def _dense_pencil(lap: sp.spmatrix, mass: np.ndarray, skip_constant: bool):
    w = scipy.linalg.eigh(lap.toarray(), np.diag(mass), eigvals_only=True)
    lam = float(w[1] if skip_constant else w[0])
    return lam, {"method": "dense", "iterations": 0, "residual": 0.0}


def smallest_pencil_eigenvalue(lap: sp.spmatrix, mass: np.ndarray,
                               skip_constant: bool, tol: float = 1e-8,
                               maxiter: int = 500):
    """Smallest (nontrivial) eigenvalue of ``lap u = lambda * mass u``.

    With ``skip_constant`` the constant vector is projected out in the mass
    inner product and the smallest remaining eigenvalue is returned; this
    is the Poincare eigenvalue of a connected subgraph. Small problems go
    through a dense solve; everything else runs a shifted block inverse
    iteration with Rayleigh-Ritz extraction. A block of a few vectors is
    used because near-square boxes have (almost) degenerate lowest pairs,
    which stall single-vector iteration.

    Returns (eigenvalue, info) where info carries the iteration count and
    the certified relative residual |lap u - lam mass u|_{M^-1} / lam.
    """
    n = lap.shape[0]
    if n <= _DENSE_CUTOFF + (1 if skip_constant else 0):
        return _dense_pencil(lap, mass, skip_constant)

    block = _RITZ_BLOCK
    # the first shift only needs to make the matrix definite; it is refined
    # below once the Ritz values reveal the eigenvalue scale, because a
    # shift far above lambda_2 makes the contraction arbitrarily slow
    shift = 1e-3 * float(lap.diagonal().sum() / mass.sum())
    lu = splu((lap + sp.diags(shift * mass)).tocsc())
    msum = float(mass.sum())

    def deflate(v):
        if skip_constant:
            v -= (mass @ v) / msum
        return v

    rng = np.random.Generator(np.random.Philox(key=0x93C5))
    vecs = deflate(rng.standard_normal((n, block)))
    lam_u = None
    for iteration in range(1, maxiter + 1):
        vecs = lu.solve(mass[:, None] * vecs)
        deflate(vecs)
        gram = vecs.T @ (mass[:, None] * vecs)
        gw, gv = scipy.linalg.eigh(gram)
        good = gw > gw[-1] * 1e-14
        if not np.any(good):
            raise EigenSolveError("iteration subspace collapsed")
        vecs = vecs @ (gv[:, good] / np.sqrt(gw[good]))
        ritz = vecs.T @ (lap @ vecs)
        rw, rv = scipy.linalg.eigh(ritz)
        vecs = vecs @ rv
        lam = float(rw[0])
        u = vecs[:, 0]
        resid = lap @ u - lam * (mass * u)
        rnorm = float(np.sqrt(np.sum(resid * resid / mass)))
        if lam > 0 and rnorm <= tol * lam:
            return lam, {"method": "block-inverse", "iterations": iteration,
                         "residual": rnorm / lam}
        if lam > 0.0 and shift > 10.0 * lam:
            shift = 1e-2 * lam
            lu = splu((lap + sp.diags(shift * mass)).tocsc())
        lam_u = lam
    raise EigenSolveError(
        f"pencil eigensolve did not certify in {maxiter} iterations "
        f"(last value {lam_u})")


# ----------------------------------------------------------------------
# per-box subgraph


@dataclass
class BoxSubgraph:
    edge_ids: np.ndarray
    nodes: np.ndarray
    stitched_edges: int
    exits_grown_box: int
    connected: bool
    empty: bool


def box_subgraph(net: SpatialNetwork, box: Box, margin: float) -> BoxSubgraph:
    """Subgraph of all edges meeting a box, stitched into one component.

    Every edge with at least one endpoint in the box is mandatory and is
    always kept, even when its other endpoint leaves the grown box (the
    count of such exits is reported). If the mandatory subgraph is
    disconnected, shortest bridging paths through edges lying inside the
    box grown by ``margin`` are added: a breadth-first search is seeded
    with the mandatory components, and scanning the traversable edges in
    id order, any edge joining two differently-labeled trees contributes
    itself plus both tree paths. If components remain afterwards the box
    is reported as not connectable.
    """
    e = net.edges
    in_box = box.contains(net.coords, net.domain)
    mandatory = np.flatnonzero(in_box[e[:, 0]] | in_box[e[:, 1]])
    if mandatory.size == 0:
        z = np.empty(0, dtype=np.int64)
        return BoxSubgraph(z, z.copy(), 0, 0, False, True)

    sub_nodes = np.unique(e[mandatory].ravel())
    loc = -np.ones(net.nnodes, dtype=np.int64)
    loc[sub_nodes] = np.arange(sub_nodes.size)
    le = loc[e[mandatory]]
    g = sp.coo_matrix((np.ones(le.shape[0], dtype=np.int8), (le[:, 0], le[:, 1])),
                      shape=(sub_nodes.size, sub_nodes.size))
    ncomp, comp = connected_components(g, directed=False)

    grown = Box(tuple(np.asarray(box.lo) - margin),
                tuple(np.asarray(box.hi) + margin))
    in_grown = grown.contains(net.coords, net.domain)
    exits = int(np.sum(~in_grown[e[mandatory].ravel()]))
    if ncomp == 1:
        return BoxSubgraph(mandatory, sub_nodes, 0, exits, True, False)

    # stitch through the grown box
    traversable = np.flatnonzero(in_grown[e[:, 0]] & in_grown[e[:, 1]])
    indptr, nbr, eid = net.adjacency
    trav_set = np.zeros(net.nedges, dtype=bool)
    trav_set[traversable] = True

    label = {}
    parent_edge = {}
    queue = deque()
    for s, c in zip(sub_nodes, comp):
        label[int(s)] = int(c)
        parent_edge[int(s)] = -1
        queue.append(int(s))
    while queue:
        x = queue.popleft()
        for y, ed in zip(nbr[indptr[x]:indptr[x + 1]],
                         eid[indptr[x]:indptr[x + 1]]):
            if trav_set[ed] and int(y) not in label:
                label[int(y)] = label[x]
                parent_edge[int(y)] = int(ed)
                queue.append(int(y))

    root = list(range(ncomp))

    def find(c):
        while root[c] != c:
            root[c] = root[root[c]]
            c = root[c]
        return c

    added = []

    def walk_up(x):
        while parent_edge[x] >= 0:
            ed = parent_edge[x]
            added.append(ed)
            a, b = net.edges[ed]
            x = int(a) if int(b) == x else int(b)

    for ed in traversable:
        a, b = (int(v) for v in net.edges[ed])
        if a in label and b in label:
            ca, cb = find(label[a]), find(label[b])
            if ca != cb:
                root[ca] = cb
                added.append(int(ed))
                walk_up(a)
                walk_up(b)

    connected = len({find(c) for c in range(ncomp)}) == 1
    edge_ids = np.unique(np.concatenate(
        [mandatory, np.asarray(added, dtype=np.int64)]))
    nodes = np.unique(net.edges[edge_ids].ravel())
    return BoxSubgraph(edge_ids, nodes, len(set(added)), exits, connected, False)


def subgraph_pencil(net: SpatialNetwork, sub: BoxSubgraph):
    """Laplacian and lumped mass of a box subgraph, over its own nodes."""
    nodes = sub.nodes
    loc = -np.ones(net.nnodes, dtype=np.int64)
    loc[nodes] = np.arange(nodes.size)
    e = loc[net.edges[sub.edge_ids]]
    ell = net.edge_lengths[sub.edge_ids]
    w = 1.0 / ell
    i = np.concatenate([e[:, 0], e[:, 1], e[:, 0], e[:, 1]])
    j = np.concatenate([e[:, 0], e[:, 1], e[:, 1], e[:, 0]])
    v = np.concatenate([w, w, -w, -w])
    lap = sp.coo_matrix((v, (i, j)), shape=(nodes.size, nodes.size)).tocsr()
    mass = np.zeros(nodes.size)
    np.add.at(mass, e[:, 0], 0.5 * ell)
    np.add.at(mass, e[:, 1], 0.5 * ell)
    return lap, mass


# ----------------------------------------------------------------------
# connectivity / Poincare scan


@dataclass
class BoxAudit:
    index: int
    multi: tuple
    center: tuple
    subgraph_nodes: int
    mandatory_edges: int
    stitched_edges: int
    exits_grown_box: int
    connected: bool
    lambda1: float
    lambda2: float
    mu: float
    iterations: int
    residual: float


@dataclass
class ConnectivityResult:
    divisions: int
    box_side: float
    margin: float
    boxes: list
    mu_hat: float
    mu_mean: float
    mean_inverse_lambda2: float
    violations: list


def connectivity_scan(net: SpatialNetwork, divisions: int,
                      margin: float | None = None, tol: float = 1e-8,
                      maxiter: int = 500, threads: int = 1) -> ConnectivityResult:
    """Per-box Poincare audit over a ``divisions``-per-axis partition."""
    d = net.dimension
    widths = net.domain / divisions
    side = float(widths[0])
    if margin is None:
        margin = side
    gamma = net.dirichlet_mask if net.dirichlet_faces else None

    def run_box(flat: int) -> BoxAudit:
        multi = np.unravel_index(flat, (divisions,) * d)
        lo = np.asarray(multi) * widths
        box = Box(tuple(lo), tuple(lo + widths))
        center = tuple(float(c) for c in lo + 0.5 * widths)
        sub = box_subgraph(net, box, margin)
        if sub.empty or not sub.connected:
            return BoxAudit(flat, tuple(int(k) for k in multi), center,
                            int(sub.nodes.size), int(sub.edge_ids.size)
                            - sub.stitched_edges, sub.stitched_edges,
                            sub.exits_grown_box, False,
                            float("nan"), float("nan"), float("inf"), 0,
                            float("nan"))
        lap, mass = subgraph_pencil(net, sub)
        lam2, info = smallest_pencil_eigenvalue(lap, mass, True, tol, maxiter)
        mu = 1.0 / (side * np.sqrt(lam2))
        lam1 = float("nan")
        if gamma is not None:
            on_gamma = gamma[sub.nodes]
            if on_gamma.any():
                keep = ~on_gamma
                if keep.any():
                    lam1, _ = smallest_pencil_eigenvalue(
                        lap[keep][:, keep].tocsr(), mass[keep], False,
                        tol, maxiter)
                else:
                    lam1 = float("inf")
        return BoxAudit(flat, tuple(int(k) for k in multi), center,
                        int(sub.nodes.size),
                        int(sub.edge_ids.size) - sub.stitched_edges,
                        sub.stitched_edges, sub.exits_grown_box, True,
                        lam1, lam2, float(mu), info["iterations"],
                        info["residual"])

    nboxes = divisions ** d
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            boxes = list(pool.map(run_box, range(nboxes)))
    else:
        boxes = [run_box(k) for k in range(nboxes)]

    violations = [b.index for b in boxes if not b.connected]
    lam2s = np.array([b.lambda2 for b in boxes if b.connected])
    mus = np.array([b.mu for b in boxes if b.connected])
    if violations or lam2s.size == 0:
        mu_hat = float("inf")
    else:
        mu_hat = float(mus.max())
    mu_mean = float(mus.mean()) if mus.size else float("nan")
    mean_inv = float(np.mean(1.0 / lam2s)) if lam2s.size else float("nan")
    return ConnectivityResult(divisions, side, float(margin), boxes,
                              mu_hat, mu_mean, mean_inv, violations)


def poincare_slope(results) -> float:
    """Log-log slope of the mean inverse Poincare eigenvalue against the
    box side. Near 2 when the constant scales with the box side."""
    sides = np.array([r.box_side for r in results])
    means = np.array([r.mean_inverse_lambda2 for r in results])
    if np.any(~np.isfinite(means)) or sides.size < 2:
        return float("nan")
    return float(np.polyfit(np.log(sides), np.log(means), 1)[0])
