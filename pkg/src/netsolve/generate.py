"""Network generators: regular grids and random fiber networks.

The fiber generator drops straight fibers of a fixed length into the unit
square until a target total length is reached, clips them to the square,
computes all pairwise intersections, splits fibers at the intersection
points, merges coincident nodes, and keeps the largest connected component.

Randomness comes from a counter-based generator keyed by the seed, and
every fiber consumes exactly four draws (two for the midpoint, one for the
orientation, one for the placement mixture), so the sequence of fibers is a
pure function of the seed regardless of batch sizes or the stopping point.

Fiber kinds:

* ``uniform``: midpoints uniform, orientations uniform.
* ``orient-bias``: orientations concentrated around the first axis
  (wrapped-Cauchy profile with the concentration mapped from a von
  Mises-style parameter).
* ``place-bias``: half the midpoints drawn from Gaussian strips hugging
  the two faces orthogonal to the first axis.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.special import i0, i1, ndtri

from .errors import GenerationError
from .network import SpatialNetwork, all_faces

_MAX_MERGE_PASSES = 50


def grid_network(intervals: int, dirichlet_faces=None) -> SpatialNetwork:
    """Regular square grid on the unit square with the given number of
    intervals per side. Total edge length is 2 * (intervals + 1)."""
    if intervals < 1:
        raise GenerationError("grid needs at least one interval per side")
    p = intervals + 1
    xs = np.linspace(0.0, 1.0, p)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    coords = np.stack([gx.ravel(), gy.ravel()], axis=1)
    ids = np.arange(p * p).reshape(p, p)
    edges = np.vstack([
        np.stack([ids[:-1, :].ravel(), ids[1:, :].ravel()], axis=1),
        np.stack([ids[:, :-1].ravel(), ids[:, 1:].ravel()], axis=1),
    ])
    if dirichlet_faces is None:
        dirichlet_faces = all_faces(2)
    return SpatialNetwork(coords, edges, [1.0, 1.0], dirichlet_faces)


# ----------------------------------------------------------------------
# fiber sampling


def _sample_fibers(rng, count, kind, fiber_length, concentration, strip_sigma):
    u = rng.random((count, 4))
    half = 0.5 * fiber_length
    lo, hi = -half, 1.0 + half
    mid = np.empty((count, 2))
    mid[:, 0] = lo + (hi - lo) * u[:, 0]
    mid[:, 1] = lo + (hi - lo) * u[:, 1]
    if kind == "place-bias":
        # mixture: half uniform, half split between two boundary strips
        gaussian = u[:, 3] >= 0.5
        centers = np.where(u[:, 3] >= 0.75, 1.0, 0.0)
        quantile = np.clip(u[:, 0], 1e-12, 1.0 - 1e-12)
        mid[gaussian, 0] = (centers + strip_sigma * ndtri(quantile))[gaussian]
    if kind == "orient-bias":
        rho = i1(concentration) / i0(concentration)
        spread = (1.0 - rho) / (1.0 + rho)
        angle = 2.0 * np.arctan(spread * np.tan(np.pi * (u[:, 2] - 0.5)))
        theta = np.mod(angle, np.pi)
    else:
        theta = np.pi * u[:, 2]
    step = np.stack([np.cos(theta), np.sin(theta)], axis=1) * half
    return mid - step, mid + step


def _clip_to_unit_square(p0, p1):
    """Liang-Barsky clip of segments to [0,1]^2. Returns clipped endpoints
    and a keep mask (False for segments missing the square)."""
    d = p1 - p0
    n = p0.shape[0]
    t0 = np.zeros(n)
    t1 = np.ones(n)
    valid = np.ones(n, dtype=bool)
    for a in range(2):
        for p, q in ((-d[:, a], p0[:, a]), (d[:, a], 1.0 - p0[:, a])):
            zero = p == 0.0
            valid &= ~(zero & (q < 0.0))
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(zero, 0.0, q / p)
            t0 = np.where(~zero & (p < 0.0), np.maximum(t0, r), t0)
            t1 = np.where(~zero & (p > 0.0), np.minimum(t1, r), t1)
    valid &= t0 < t1
    return p0 + t0[:, None] * d, p0 + t1[:, None] * d, valid


def _snap_faces(points, tol):
    for bound in (0.0, 1.0):
        close = np.abs(points - bound) <= tol
        points[close] = bound
    return points


# ----------------------------------------------------------------------
# intersections


def _candidate_pairs(a0, a1, cell):
    """Fiber index pairs whose bounding boxes share a spatial bin."""
    lo = np.floor(np.minimum(a0, a1) / cell).astype(np.int64)
    hi = np.floor(np.maximum(a0, a1) / cell).astype(np.int64)
    count = a0.shape[0]
    fibers = np.arange(count, dtype=np.int64)
    rows = []
    for cx in (0, 1):
        for cy in (0, 1):
            kx = hi[:, 0] if cx else lo[:, 0]
            ky = hi[:, 1] if cy else lo[:, 1]
            rows.append(np.stack([kx, ky, fibers], axis=1))
    entries = np.unique(np.concatenate(rows), axis=0)
    order = np.lexsort((entries[:, 2], entries[:, 1], entries[:, 0]))
    entries = entries[order]
    boundary = np.flatnonzero(np.any(entries[1:, :2] != entries[:-1, :2], axis=1)) + 1
    starts = np.concatenate([[0], boundary, [entries.shape[0]]])
    parts = []
    for s, e in zip(starts[:-1], starts[1:]):
        k = e - s
        if k >= 2:
            ids = entries[s:e, 2]
            p, q = np.triu_indices(k, k=1)
            parts.append(np.stack([ids[p], ids[q]], axis=1))
    if not parts:
        return np.empty((0, 2), dtype=np.int64)
    return np.unique(np.concatenate(parts), axis=0)


def segment_intersection(p0, p1, q0, q1):
    """Intersection of two closed planar segments, reported structurally.

    Returns a (kind, data) pair:

    * ``("point", xy)`` for a proper crossing or an endpoint touch,
    * ``("overlap", (lo, hi))`` when the segments are collinear and share
      more than a single point; lo/hi bound the shared piece,
    * ``("none", None)`` otherwise.

    Degenerate (zero length) segments degrade to point containment tests
    rather than raising.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    u = p1 - p0
    v = q1 - q0
    w = q0 - p0
    lu = float(np.hypot(*u))
    lv = float(np.hypot(*v))

    def on_segment(a, b, x, la):
        # closed-segment point test with a relative tolerance
        d = b - a
        r = x - a
        if abs(d[0] * r[1] - d[1] * r[0]) > 1e-12 * max(la * la, 1e-300):
            return False
        t = float(r @ d) / max(la * la, 1e-300)
        return -1e-12 <= t <= 1.0 + 1e-12

    if lu == 0.0 and lv == 0.0:
        return ("point", p0.copy()) if np.all(p0 == q0) else ("none", None)
    if lu == 0.0:
        return ("point", p0.copy()) if on_segment(q0, q1, p0, lv) else ("none", None)
    if lv == 0.0:
        return ("point", q0.copy()) if on_segment(p0, p1, q0, lu) else ("none", None)

    den = u[0] * v[1] - u[1] * v[0]
    if abs(den) > 1e-12 * lu * lv:
        t = (w[0] * v[1] - w[1] * v[0]) / den
        s = (w[0] * u[1] - w[1] * u[0]) / den
        if 0.0 <= t <= 1.0 and 0.0 <= s <= 1.0:
            return ("point", p0 + t * u)
        return ("none", None)
    # parallel; collinear iff the offset has no transverse part
    if abs(w[0] * u[1] - w[1] * u[0]) > 1e-12 * lu * max(float(np.hypot(*w)), lv):
        return ("none", None)
    t0 = float((q0 - p0) @ u) / (lu * lu)
    t1 = float((q1 - p0) @ u) / (lu * lu)
    lo, hi = max(0.0, min(t0, t1)), min(1.0, max(t0, t1))
    if hi < lo:
        return ("none", None)
    if hi == lo:
        return ("point", p0 + lo * u)
    return ("overlap", (p0 + lo * u, p0 + hi * u))


def _intersections(a0, a1, lengths, cell):
    """Exact pairwise segment intersections.

    Returns (fiber_i, fiber_j, param_i, param_j, points) with fiber_i <
    fiber_j; the point is evaluated on the lower-index fiber. Parallel
    segments are skipped."""
    pairs = _candidate_pairs(a0, a1, cell)
    if pairs.shape[0] == 0:
        z = np.empty(0, dtype=np.int64)
        return z, z.copy(), np.empty(0), np.empty(0), np.empty((0, 2))
    i, j = pairs[:, 0], pairs[:, 1]
    u = a1[i] - a0[i]
    v = a1[j] - a0[j]
    w = a0[j] - a0[i]
    den = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
    ok = np.abs(den) > 1e-12 * lengths[i] * lengths[j]
    den_safe = np.where(ok, den, 1.0)
    t = (w[:, 0] * v[:, 1] - w[:, 1] * v[:, 0]) / den_safe
    s = (w[:, 0] * u[:, 1] - w[:, 1] * u[:, 0]) / den_safe
    ok &= (t >= 0.0) & (t <= 1.0) & (s >= 0.0) & (s <= 1.0)
    i, j, t, s = i[ok], j[ok], t[ok], s[ok]
    points = a0[i] + t[:, None] * (a1[i] - a0[i])
    return i, j, t, s, points


def _split_fibers(a0, a1, fi, fj, ti, sj, points):
    """Split fibers at their intersections.

    Node ids: fiber f owns endpoint nodes 2f and 2f+1; intersection k is
    the shared node 2F+k. Returns (coords, edges, edge_fiber)."""
    nfib = a0.shape[0]
    nint = points.shape[0]
    coords = np.empty((2 * nfib + nint, 2))
    coords[0:2 * nfib:2] = a0
    coords[1:2 * nfib:2] = a1
    coords[2 * nfib:] = points

    ev_fiber = np.concatenate([fi, fj])
    ev_param = np.concatenate([ti, sj])
    ev_node = np.concatenate([2 * nfib + np.arange(nint, dtype=np.int64)] * 2)
    order = np.lexsort((ev_node, ev_param, ev_fiber))
    ev_fiber, ev_node = ev_fiber[order], ev_node[order]

    counts = np.bincount(ev_fiber, minlength=nfib)
    chain_len = counts + 2
    choff = np.concatenate([[0], np.cumsum(chain_len)])
    seq = np.empty(choff[-1], dtype=np.int64)
    seq[choff[:-1]] = 2 * np.arange(nfib)
    seq[choff[1:] - 1] = 2 * np.arange(nfib) + 1
    ev_offsets = np.concatenate([[0], np.cumsum(counts)])
    rank = np.arange(ev_fiber.size) - ev_offsets[ev_fiber]
    seq[choff[ev_fiber] + 1 + rank] = ev_node

    valid = np.ones(seq.size - 1, dtype=bool)
    valid[choff[1:-1] - 1] = False
    edges = np.stack([seq[:-1][valid], seq[1:][valid]], axis=1)
    edge_fiber = np.repeat(np.arange(nfib, dtype=np.int64), chain_len - 1)
    return coords, edges, edge_fiber


# ----------------------------------------------------------------------
# cleanup


def _merge_coincident(coords, edges, tol):
    """Merge node clusters closer than tol (centroid placement, boundary
    faces re-snapped), repeated until no close pair remains."""
    passes = 0
    while True:
        tree = cKDTree(coords)
        close = tree.query_pairs(tol, output_type="ndarray")
        if close.shape[0] == 0:
            return coords, edges, passes
        passes += 1
        if passes > _MAX_MERGE_PASSES:
            raise GenerationError("node merging did not settle; the merge "
                                  "tolerance is too coarse for this network")
        n = coords.shape[0]
        g = sp.coo_matrix((np.ones(close.shape[0], dtype=np.int8),
                           (close[:, 0], close[:, 1])), shape=(n, n))
        ngroups, labels = connected_components(g, directed=False)
        sizes = np.bincount(labels).astype(np.float64)
        merged = np.empty((ngroups, 2))
        for a in range(2):
            merged[:, a] = np.bincount(labels, weights=coords[:, a]) / sizes
        coords = _snap_faces(merged, tol)
        edges = labels[edges]


def _dedup_edges(edges, edge_fiber):
    """Drop self-loops and duplicate edges; a duplicate keeps the fiber id
    of its first occurrence."""
    canon = np.sort(edges, axis=1)
    keep = canon[:, 0] != canon[:, 1]
    canon, edge_fiber = canon[keep], edge_fiber[keep]
    if canon.shape[0] == 0:
        return canon, edge_fiber
    order = np.lexsort((np.arange(canon.shape[0]), canon[:, 1], canon[:, 0]))
    canon, edge_fiber = canon[order], edge_fiber[order]
    first = np.concatenate([[True], np.any(canon[1:] != canon[:-1], axis=1)])
    return canon[first], edge_fiber[first]


def _largest_component(coords, edges, edge_fiber):
    n = coords.shape[0]
    g = sp.coo_matrix((np.ones(edges.shape[0], dtype=np.int8),
                       (edges[:, 0], edges[:, 1])), shape=(n, n))
    ncomp, labels = connected_components(g, directed=False)
    if ncomp == 1:
        return coords, edges, edge_fiber, 0
    keep_label = int(np.argmax(np.bincount(labels)))
    node_keep = labels == keep_label
    new_id = np.cumsum(node_keep) - 1
    edge_keep = node_keep[edges[:, 0]] & node_keep[edges[:, 1]]
    return (coords[node_keep], new_id[edges[edge_keep]],
            edge_fiber[edge_keep], int(ncomp - 1))


# ----------------------------------------------------------------------
# driver


def generate_fiber_network(seed: int, kind: str = "uniform",
                           fiber_length: float = 0.05,
                           density: float = 1000.0,
                           concentration: float = 4.0,
                           strip_sigma: float = 0.1,
                           merge_tol: float | None = None,
                           dirichlet_faces=()):
    """Generate a random fiber network in the unit square.

    ``density`` is the target total clipped fiber length; generation stops
    with the first fiber that reaches it. Returns (network, stats).
    """
    if kind not in ("uniform", "orient-bias", "place-bias"):
        raise GenerationError(f"unknown fiber kind {kind!r}")
    if fiber_length <= 0 or density <= 0:
        raise GenerationError("fiber length and density must be positive")
    if merge_tol is None:
        merge_tol = fiber_length * 1e-4

    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    mean_kept = 0.85 * fiber_length
    batch = int(1.1 * density / mean_kept) + 64
    raw0, raw1 = [], []
    drawn = 0
    kept_len = np.empty(0)
    while True:
        p0, p1 = _sample_fibers(rng, batch, kind, fiber_length,
                                concentration, strip_sigma)
        drawn += batch
        c0, c1, valid = _clip_to_unit_square(p0, p1)
        c0 = _snap_faces(c0, merge_tol)
        c1 = _snap_faces(c1, merge_tol)
        seg_len = np.where(valid, np.linalg.norm(c1 - c0, axis=1), 0.0)
        raw0.append(c0)
        raw1.append(c1)
        kept_len = np.concatenate([kept_len, seg_len])
        total = np.cumsum(kept_len)
        if total[-1] >= density:
            stop = int(np.searchsorted(total, density) + 1)
            break
        batch = max(1024, batch // 4)

    c0 = np.concatenate(raw0)[:stop]
    c1 = np.concatenate(raw1)[:stop]
    lengths = kept_len[:stop]
    keep = lengths > merge_tol
    a0, a1, lengths = c0[keep], c1[keep], lengths[keep]
    if a0.shape[0] < 2:
        raise GenerationError("not enough fibers land in the domain; "
                              "increase the density")

    fi, fj, ti, sj, pts = _intersections(a0, a1, lengths, fiber_length)
    coords, edges, edge_fiber = _split_fibers(a0, a1, fi, fj, ti, sj, pts)
    coords, edges, merge_passes = _merge_coincident(coords, edges, merge_tol)
    edges, edge_fiber = _dedup_edges(edges, edge_fiber)
    coords, edges, edge_fiber, dropped = _largest_component(
        coords, edges, edge_fiber)
    if edges.shape[0] == 0:
        raise GenerationError("generation left no edges; increase the density")

    net = SpatialNetwork(coords, edges, [1.0, 1.0],
                         dirichlet_faces=dirichlet_faces,
                         edge_fiber=edge_fiber)
    stats = {
        "seed": int(seed),
        "kind": kind,
        "fiber_length": float(fiber_length),
        "density_target": float(density),
        "fibers_drawn": int(drawn),
        "fibers_kept": int(a0.shape[0]),
        "clipped_length": float(lengths.sum()),
        "intersections": int(pts.shape[0]),
        "merge_passes": int(merge_passes),
        "components_dropped": int(dropped),
        "nodes": int(net.nnodes),
        "edges": int(net.nedges),
        "total_edge_length": net.total_edge_length,
    }
    return net, stats
