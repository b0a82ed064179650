import numpy as np
import pytest

from vemstab import _kernels_py, kernels
from vemstab.errors import CompatibilityError, ContinuityError, InvalidArgument
from vemstab.exactbasis import fit_rate
from vemstab.femstokes import (
    FemField,
    FemSpace,
    boundary_l2_inner,
    dirichlet_trace_from_edge_polys,
    h1_error,
    h1_semi_inner,
    l2_error,
    l2_inner,
    solve_stokes,
)
from vemstab.geometry import element_sequence, subtriangulate
from vemstab.polynomials import mass_matrix, scalar_basis
from vemstab.quadrature import edge_gauss_lobatto
from vemstab.vemspace import DofLayout, lagrange_matrix


def _space(poly, level=1, method="quality"):
    return FemSpace(subtriangulate(poly, level, method=method, max_area=poly.area / 8 if method == "quality" else None))


def _nodal(space, func):
    v = np.asarray(func(space.node_points), dtype=float)
    return FemField(space, np.concatenate([v[:, 0], v[:, 1]]), np.zeros(space.n_pressure))


# stream function a(x) b(y) with a = x^2 (1 - x)^2
def _a(x, k):
    return [x**2 - 2 * x**3 + x**4, 2 * x - 6 * x**2 + 4 * x**3, 2 - 12 * x + 12 * x**2, -12 + 24 * x][k]


def _curl_u(pts):
    x, y = pts[:, 0], pts[:, 1]
    return np.column_stack([_a(x, 0) * _a(y, 1), -_a(x, 1) * _a(y, 0)])


def _curl_grad(pts):
    x, y = pts[:, 0], pts[:, 1]
    g = np.empty((len(pts), 2, 2))
    g[:, 0, 0] = _a(x, 1) * _a(y, 1)
    g[:, 0, 1] = _a(x, 0) * _a(y, 2)
    g[:, 1, 0] = -_a(x, 2) * _a(y, 0)
    g[:, 1, 1] = -_a(x, 1) * _a(y, 1)
    return g


def _curl_f(pts):
    x, y = pts[:, 0], pts[:, 1]
    lap1 = _a(x, 2) * _a(y, 1) + _a(x, 0) * _a(y, 3)
    lap2 = -(_a(x, 3) * _a(y, 0) + _a(x, 1) * _a(y, 2))
    # s = x - 1/2, grad s = (1, 0)
    return np.column_stack([-lap1 - 1.0, -lap2])


@pytest.mark.parametrize("poly_id", [("flatten", 1), ("hanging_node", 3), ("flatten", 5)])
def test_divergence_free_linear_field_is_exact(poly_id):
    poly = element_sequence(*poly_id)
    space = _space(poly)
    u = solve_stokes(space, trace=lambda x: np.column_stack([x[:, 0], -x[:, 1]]))
    exact = np.concatenate([space.node_points[:, 0], -space.node_points[:, 1]])
    np.testing.assert_allclose(u.velocity, exact, atol=1e-11)
    # the flattest element loses a digit or two in the pressure
    np.testing.assert_allclose(u.pressure, 0.0, atol=1e-9)


def test_quadratic_solution_with_pressure_is_exact(square):
    # u = (y^2, x^2) is divergence free, -Lap u = (-2, -2); with s = x + y - 1, f = -Lap u - grad s = (-3, -3)
    space = _space(square, 1, "fan")
    u = solve_stokes(space, f=lambda x: np.full((len(x), 2), -3.0), trace=lambda x: np.column_stack([x[:, 1] ** 2, x[:, 0] ** 2]))
    X = space.node_points
    np.testing.assert_allclose(u.velocity, np.concatenate([X[:, 1] ** 2, X[:, 0] ** 2]), atol=1e-11)
    Pv = space.mesh.points
    np.testing.assert_allclose(u.pressure, Pv[:, 0] + Pv[:, 1] - 1.0, atol=1e-10)


def test_zero_data_gives_zero(pentagon):
    u = solve_stokes(_space(pentagon))
    assert np.abs(u.velocity).max() == 0.0
    assert np.abs(u.pressure).max() < 1e-14


def test_pressure_has_zero_mean(pentagon):
    u = solve_stokes(_space(pentagon), f=lambda x: np.column_stack([np.sin(3 * x[:, 1]), x[:, 0] ** 2]))
    assert abs(u.pressure_mean()) < 1e-13


def test_incompatible_data_rejected(square):
    space = _space(square, 1, "fan")
    with pytest.raises(CompatibilityError):
        solve_stokes(space, g=lambda x: np.ones(len(x)))
    # compatible when the boundary flux balances int g = 2
    u = solve_stokes(space, g=lambda x: np.full(len(x), 2.0), trace=lambda x: x - 0.5)
    np.testing.assert_allclose(u.velocity, np.concatenate([space.node_points[:, 0] - 0.5, space.node_points[:, 1] - 0.5]), atol=1e-11)


def test_manufactured_stream_function_rates(square):
    hs, e1, e0 = [], [], []
    # level 1 is pre-asymptotic for this stream function
    for lev in (2, 3, 4, 5):
        space = FemSpace(subtriangulate(square, lev, method="fan"))
        u = solve_stokes(space, f=_curl_f, f_degree=8)
        hs.append(2.0**-lev)
        e1.append(h1_error(u, _curl_grad, 8))
        e0.append(l2_error(u, _curl_u, 8))
    assert fit_rate(np.array(hs), np.array(e1)).slope == pytest.approx(2.0, abs=0.15)
    assert fit_rate(np.array(hs), np.array(e0)).slope == pytest.approx(3.0, abs=0.2)


def test_h1_of_constant_is_zero(pentagon, rng):
    space = _space(pentagon)
    c = _nodal(space, lambda x: np.tile([2.0, -1.0], (len(x), 1)))
    w = FemField(space, rng.standard_normal(space.n_velocity), np.zeros(space.n_pressure))
    assert abs(h1_semi_inner(c, w)) < 1e-11


def test_h1_of_x_on_unit_square(square):
    space = _space(square, 2, "fan")
    u = _nodal(space, lambda x: np.column_stack([x[:, 0], 0 * x[:, 0]]))
    assert h1_semi_inner(u, u) == pytest.approx(1.0, rel=1e-13)


@pytest.mark.parametrize("k", [0, 2, 5])
def test_l2_inner_matches_polynomial_mass(pentagon, k):
    # quadratic monomials are reproduced by P2 interpolation, so the match is exact
    b = scalar_basis(pentagon, 2)
    space = _space(pentagon)
    u = _nodal(space, lambda x: np.column_stack([b(x)[:, k], 0 * x[:, 0]]))
    assert l2_inner(u, u) == pytest.approx(mass_matrix(b, b, pentagon)[k, k], rel=1e-12)


def test_boundary_inner_of_constant(pentagon):
    space = _space(pentagon)
    u = _nodal(space, lambda x: np.tile([1.0, 0.0], (len(x), 1)))
    assert boundary_l2_inner(u, u) == pytest.approx(pentagon.perimeter, rel=1e-13)
    assert boundary_l2_inner(u, u, edges=[0]) == pytest.approx(pentagon.edge_lengths[0], rel=1e-13)


def test_trace_from_global_linear_field(pentagon):
    space = _space(pentagon)
    lin = lambda x: np.column_stack([1 + 2 * x[:, 0] - x[:, 1], x[:, 0] + 3 * x[:, 1]])
    polys = [lambda t, e=e: lin(pentagon.edge_point(e, t)) for e in range(pentagon.n_edges)]
    got = dirichlet_trace_from_edge_polys(space, polys)
    np.testing.assert_allclose(got, lin(space.node_points[space.boundary_nodes]), atol=1e-14)


def test_trace_of_gauss_lobatto_basis_function(pentagon):
    p = 3
    lay = DofLayout(pentagon, p)
    nodes = lay.gl_nodes
    space = _space(pentagon)

    def edge_poly(e, t, which=1):
        vals = np.zeros((len(np.atleast_1d(t)), 2))
        if e == 0:
            vals[:, 0] = lagrange_matrix(nodes, t)[:, which]
        return vals

    polys = [lambda t, e=e: edge_poly(e, t) for e in range(pentagon.n_edges)]
    tr = dirichlet_trace_from_edge_polys(space, polys)
    np.testing.assert_allclose(lagrange_matrix(nodes, nodes), np.eye(p + 1), atol=1e-14)
    sel = space.boundary_parent == 0
    expect = lagrange_matrix(nodes, space.boundary_param[sel])[:, 1]
    np.testing.assert_allclose(tr[sel, 0], expect, atol=1e-14)


def test_cubic_edge_trace_at_midpoints(pentagon):
    space = FemSpace(subtriangulate(pentagon, 3, method="quality"))
    cubic = lambda t: np.column_stack([t**3 - t, 2 * t**2 * (1 - t)])
    polys = [lambda t, e=e: cubic(np.asarray(t)) * (e == 0) for e in range(pentagon.n_edges)]
    tr = dirichlet_trace_from_edge_polys(space, polys)
    sel = space.boundary_parent == 0
    np.testing.assert_allclose(tr[sel], cubic(space.boundary_param[sel]), atol=1e-14)


def test_discontinuous_edge_polys_rejected(pentagon):
    space = _space(pentagon)
    polys = [lambda t, e=e: np.tile([float(e), 0.0], (len(np.atleast_1d(t)), 1)) for e in range(pentagon.n_edges)]
    with pytest.raises(ContinuityError):
        dirichlet_trace_from_edge_polys(space, polys)
    with pytest.raises(InvalidArgument):
        dirichlet_trace_from_edge_polys(space, polys[:2])


def test_fields_on_different_spaces_rejected(pentagon):
    a, b = _space(pentagon), _space(pentagon)
    with pytest.raises(InvalidArgument):
        h1_semi_inner(_nodal(a, lambda x: x), _nodal(b, lambda x: x))


@pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernels not built")
def test_compiled_kernels_match_numpy(pentagon):
    mesh = subtriangulate(pentagon, 2, method="quality")
    ke_c, de_c = kernels.element_matrices(mesh.points, mesh.triangles)
    ke_p, de_p = _kernels_py.element_matrices(mesh.points, mesh.triangles)
    np.testing.assert_allclose(ke_c, ke_p, rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(de_c, de_p, rtol=1e-13, atol=1e-14)


def test_element_stiffness_rows_sum_to_zero(pentagon):
    mesh = subtriangulate(pentagon, 1, method="quality")
    ke, _ = _kernels_py.element_matrices(mesh.points, mesh.triangles)
    np.testing.assert_allclose(ke.sum(axis=2), 0.0, atol=1e-13)
    np.testing.assert_allclose(ke, ke.transpose(0, 2, 1), atol=1e-15)


def test_gauss_lobatto_nodes_used_by_layout(pentagon):
    lay = DofLayout(pentagon, 4)
    np.testing.assert_allclose(lay.gl_nodes, 0.5 * (edge_gauss_lobatto(4) + 1))
