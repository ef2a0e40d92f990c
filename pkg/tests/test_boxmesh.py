"""Coarse box mesh, multilinear basis, and quasi-interpolation."""

import numpy as np
import pytest

import oracles
from netsolve import (BasisRestriction, BoxMesh, SpatialNetwork,
                      generate_fiber_network, grid_network,
                      multilinear_corner_weights)
from netsolve.errors import AssumptionViolation, ConfigError


def mesh_for(net, spacing):
    return BoxMesh(net.domain, spacing, net.dirichlet_faces)


# ---------------------------------------------------------------- mesh shape


def test_unit_square_quarter_spacing_counts():
    mesh = BoxMesh((1.0, 1.0), 0.25, ())
    assert mesh.nelem_total == 16
    assert mesh.nvert_total == 25


def test_spacing_must_divide_domain():
    with pytest.raises(ConfigError):
        BoxMesh((1.0, 1.0), 0.3, ())


def test_spacing_divides_with_float_slack():
    # 1/7 does not have a finite binary expansion; 7 * (1/7) ~ 1
    BoxMesh((1.0, 1.0), 1.0 / 7.0, ())


def test_anisotropic_domain():
    mesh = BoxMesh((2.0, 1.0), 0.5, ())
    assert list(mesh.nelem) == [4, 2]
    assert mesh.nvert_total == 5 * 3


def test_free_vertices_come_first():
    mesh = BoxMesh((1.0, 1.0), 0.25, ((0, 0), (0, 1), (1, 0), (1, 1)))
    assert mesh.nfree == 9  # interior 3x3 of the 5x5 vertex grid
    coords = mesh.vertex_coords
    free = coords[: mesh.nfree]
    assert np.all((free > 0.0) & (free < 1.0))
    constrained = coords[mesh.nfree:]
    onwall = (constrained == 0.0) | (constrained == 1.0)
    assert np.all(onwall.any(axis=1))


def test_no_dirichlet_means_all_free():
    mesh = BoxMesh((1.0, 1.0), 0.5, ())
    assert mesh.nfree == mesh.nvert_total


def test_element_assignment_half_open_with_top_closure():
    mesh = BoxMesh((1.0, 1.0), 0.25, ())
    pts = np.array([[0.0, 0.0], [0.25, 0.5], [1.0, 0.5], [1.0, 1.0]])
    multi = mesh.element_of_points(pts)
    assert list(multi[0]) == [0, 0]
    assert list(multi[1]) == [1, 2]
    assert list(multi[2]) == [3, 2]  # rightmost element in its row
    assert list(multi[3]) == [3, 3]


def test_element_assignment_is_partition():
    net, _ = generate_fiber_network(seed=1, kind="uniform", fiber_length=0.25,
                                    density=30.0)
    mesh = mesh_for(net, 0.25)
    res = BasisRestriction(net, mesh)
    seen = np.zeros(net.nnodes, dtype=int)
    for e in range(mesh.nelem_total):
        seen[res.nodes_in_elements([e])] += 1
    assert np.all(seen == 1)


# -------------------------------------------------------------------- patches


def test_interior_vertex_patch_has_four_elements():
    mesh = BoxMesh((1.0, 1.0), 0.25, ())
    vid = mesh.vertex_id((2, 2))
    lo, hi = mesh.vertex_patch_range(vid, 1)
    count = np.prod(hi - lo + 1)
    assert count == 4


def test_interior_element_patch_has_nine_elements():
    mesh = BoxMesh((1.0, 1.0), 0.25, ())
    lo, hi = mesh.element_patch_range((2, 2), 1)
    assert np.prod(hi - lo + 1) == 9


def test_corner_element_double_patch_clips_to_nine():
    mesh = BoxMesh((1.0, 1.0), 0.25, ())
    lo, hi = mesh.element_patch_range((0, 0), 2)
    assert np.prod(hi - lo + 1) == 9


def test_every_element_in_exactly_four_vertex_patches():
    mesh = BoxMesh((1.0, 1.0), 0.25, ())
    hits = np.zeros(mesh.nelem_total, dtype=int)
    for vid in range(mesh.nvert_total):
        lo, hi = mesh.vertex_patch_range(vid, 1)
        for e in range(mesh.nelem_total):
            m = np.unravel_index(e, tuple(mesh.nelem))
            if np.all(lo <= m) and np.all(m <= hi):
                hits[e] += 1
    assert np.all(hits == 2 ** 2)


# ------------------------------------------------------------------ Q1 basis


def test_corner_weights_reference_point():
    w = multilinear_corner_weights(np.array([[0.1, 0.2]]))
    assert np.allclose(w[0], [0.72, 0.08, 0.18, 0.02], rtol=0, atol=1e-15)


def test_corner_weights_midpoint():
    w = multilinear_corner_weights(np.array([[0.5, 0.5]]))
    assert np.allclose(w[0], [0.25] * 4)


def test_corner_weights_match_loop_oracle():
    rng = np.random.default_rng(4)
    for d in (2, 3):
        pts = rng.random((20, d))
        w = multilinear_corner_weights(pts)
        for i, p in enumerate(pts):
            assert np.allclose(w[i], oracles.q1_weights(p), atol=1e-14)


def test_basis_row_is_lagrange_at_mesh_vertices():
    mesh = BoxMesh((1.0, 1.0), 0.5, ())
    coords = mesh.vertex_coords
    # shift interior sampling off the grid lines is not needed: vertices
    # must read exactly 1 on their own hat
    edges = [[i, i + 1] for i in range(len(coords) - 1)]
    net = SpatialNetwork(coords, np.asarray(edges), (1.0, 1.0),
                         require_connected=False)
    res = BasisRestriction(net, mesh)
    dense = res.basis.toarray()
    for i in range(len(coords)):
        row = dense[i]
        k = mesh.vertex_id(mesh.vertex_multi[np.argmax(
            (mesh.vertex_coords == coords[i]).all(axis=1))])
        assert row[k] == 1.0
        assert row.sum() == pytest.approx(1.0, abs=1e-12)


def test_basis_partition_of_unity_and_support(small_fiber_net):
    net, _ = small_fiber_net
    mesh = mesh_for(net, 0.25)
    res = BasisRestriction(net, mesh)
    rows = res.basis.toarray()
    assert np.allclose(rows.sum(axis=1), 1.0, atol=1e-12)
    assert rows.min() >= 0.0 and rows.max() <= 1.0
    # at most 2^d nonzeros per node, all on corners of the containing element
    assert (rows != 0).sum(axis=1).max() <= 4
    for i in range(0, net.nnodes, 7):
        e = res.node_element[i]
        lo = np.unravel_index(e, tuple(mesh.nelem))
        corners = {mesh.vertex_id(np.add(lo, off))
                   for off in [(0, 0), (1, 0), (0, 1), (1, 1)]}
        assert set(np.nonzero(rows[i])[0]).issubset(corners)


def test_basis_lipschitz_along_edges(small_fiber_net):
    # hat-function differences along an edge are at most sqrt(d)/H times
    # the edge length
    net, _ = small_fiber_net
    mesh = mesh_for(net, 0.25)
    res = BasisRestriction(net, mesh)
    rows = res.basis.toarray()
    lengths = net.edge_lengths
    bound = np.sqrt(2.0) / mesh.spacing
    diffs = np.abs(rows[net.edges[:, 0]] - rows[net.edges[:, 1]])
    assert np.all(diffs.max(axis=1) <= bound * lengths * (1 + 1e-12))


# ------------------------------------------------------------- interpolation


def test_interpolate_constant_identity(small_fiber_net):
    net, _ = small_fiber_net
    res = BasisRestriction(net, mesh_for(net, 0.25))
    out = res.interpolate(np.full(net.nnodes, 3.25))
    assert np.allclose(out, 3.25, atol=1e-12)


def test_interpolate_free_only_drops_below_one_near_boundary(grid16):
    net = grid16
    res = BasisRestriction(net, mesh_for(net, 0.25))
    out = res.interpolate(np.ones(net.nnodes), free_only=True)
    near = np.isclose(net.coords[:, 0], 1.0 / 16.0) & np.isclose(
        net.coords[:, 1], 0.5)
    assert out[near].max() < 1.0
    interior = np.isclose(net.coords[:, 0], 0.5) & np.isclose(
        net.coords[:, 1], 0.5)
    assert out[interior] == pytest.approx(1.0, abs=1e-12)


def test_interpolation_coefficients_are_mass_averages():
    net = grid_network(8)
    mesh = mesh_for(net, 0.25)
    res = BasisRestriction(net, mesh)
    rng = np.random.default_rng(9)
    v = rng.standard_normal(net.nnodes)
    coeffs = res.coarse_values(v)
    mass = net.mass
    for k in range(mesh.nvert_total):
        e = res.vertex_element[k]
        nodes = res.nodes_in_elements([e])
        expect = float(mass[nodes] @ v[nodes]) / float(mass[nodes].sum())
        assert coeffs[0, k] == pytest.approx(expect, rel=1e-12)


def test_empty_element_raises_and_names_remedy():
    # two distant clusters leave interior elements empty at H = 1/8
    coords = np.array([[0.01, 0.01], [0.02, 0.01], [0.99, 0.99], [0.98, 0.99],
                       [0.02, 0.02], [0.99, 0.98]])
    edges = np.array([[0, 1], [2, 3], [0, 4], [2, 5], [1, 4], [3, 5]])
    net = SpatialNetwork(coords, edges, (1.0, 1.0), require_connected=False)
    with pytest.raises(AssumptionViolation) as err:
        BasisRestriction(net, BoxMesh((1.0, 1.0), 0.125, ()))
    assert "mesh spacing" in str(err.value)


def test_interpolant_energy_bound_uses_network_constants(small_fiber_net):
    # coarse interpolation is stable in energy, with the constant built
    # from the measured homogeneity and connectivity of the network
    from netsolve import connectivity_scan, homogeneity_scan

    net, _ = small_fiber_net
    mesh = mesh_for(net, 0.25)
    res = BasisRestriction(net, mesh)
    hom = homogeneity_scan(net, 4)
    con = connectivity_scan(net, 4)
    sigma = hom.sigma_hat
    mu = con.mu_hat
    assert np.isfinite(sigma) and np.isfinite(mu)
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(5):
        v = rng.standard_normal(net.nnodes)
        iv = res.interpolate(v)
        lv = net.laplacian_norm(v)
        liv = net.laplacian_norm(iv)
        if lv > 0:
            worst = max(worst, liv / (np.sqrt(sigma) * mu * lv))
    assert worst <= 10.0


def test_product_rule_energy_bound(small_fiber_net):
    # |v phi_k|^2_{L,T} <= 2d (H^-2 |v|^2_{M,T} + |v|^2_{L,T})
    net, _ = small_fiber_net
    mesh = mesh_for(net, 0.25)
    res = BasisRestriction(net, mesh)
    rows = res.basis.toarray()
    rng = np.random.default_rng(23)
    h = mesh.spacing
    factor = 2 * 2  # 2d with d = 2
    for _ in range(3):
        v = rng.standard_normal(net.nnodes)
        for k in range(mesh.nvert_total):
            phi = rows[:, k]
            for e in range(mesh.nelem_total):
                nodes = res.nodes_in_elements([e])
                if nodes.size == 0:
                    continue
                lhs = net.laplacian_quadratic(v * phi, where=nodes)
                rhs = factor * (net.mass_quadratic(v, where=nodes) / h ** 2
                                + net.laplacian_quadratic(v, where=nodes))
                assert lhs <= rhs * (1 + 1e-9)


def test_describe_reports_population(small_fiber_net):
    net, _ = small_fiber_net
    res = BasisRestriction(net, mesh_for(net, 0.25))
    info = res.describe()
    assert info["total_elements"] == 16
    assert info["nodes_per_element_min"] >= 1
    assert sum(info["nodes_per_element"]) == net.nnodes
