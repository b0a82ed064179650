import numpy as np
import pytest

from vemstab.errors import InvalidArgument, InvalidGeometry, TriangulationFailure
from vemstab.geometry import (
    build_polygon,
    chebyshev_center,
    element_sequence,
    kernel_polygon,
    regularity_report,
    subtriangulate,
)

from .conftest import HEXAGON, SQUARE


def test_unit_square_measures(square):
    assert square.area == pytest.approx(1.0)
    assert square.diameter == pytest.approx(np.sqrt(2.0))
    np.testing.assert_allclose(square.centroid, [0.5, 0.5])
    assert square.perimeter == pytest.approx(4.0)


def test_reentrant_pentagon_by_shoelace():
    poly = build_polygon([(0, 0), (2, 0), (2, 2), (1, 1), (0, 2)])
    assert poly.area == pytest.approx(3.0)
    assert poly.diameter == pytest.approx(2 * np.sqrt(2.0))


def test_clockwise_input_is_reoriented(square):
    cw = build_polygon(SQUARE[::-1])
    assert cw.area == pytest.approx(1.0)
    assert cw.area > 0
    # same vertex cycle, possibly from another starting vertex
    k = int(np.flatnonzero(np.all(cw.vertices == square.vertices[0], axis=1))[0])
    np.testing.assert_array_equal(np.roll(cw.vertices, -k, axis=0), square.vertices)


def test_normals_point_outward(hexagon):
    mids = hexagon.vertices + 0.5 * hexagon.edge_vectors
    out = np.einsum("ij,ij->i", mids - hexagon.centroid, hexagon.normals)
    assert np.all(out > 0)
    np.testing.assert_allclose(np.linalg.norm(hexagon.normals, axis=1), 1.0)


@pytest.mark.parametrize(
    "verts, msg",
    [
        ([(0, 0), (1, 0)], "at least 3"),
        ([(0, 0), (1, 0), (2, 0)], "zero area"),
        ([(0, 0), (1, 0), (1, 0), (0, 1)], "coincide"),
        ([(0, 0), (2, 0), (2, 2), (1, -1), (0, 2)], "intersect"),
        ([(0, 0), (np.nan, 0), (0, 1)], "non-finite"),
    ],
)
def test_invalid_polygons(verts, msg):
    with pytest.raises(InvalidGeometry, match=msg):
        build_polygon(verts)


def test_hanging_node_first_element_has_collinear_node():
    poly = element_sequence("hanging_node", 1)
    assert poly.n_vertices == 5
    assert any(np.allclose(v, (1, 2)) for v in poly.vertices)
    assert poly.area == pytest.approx(4.0)


def test_hanging_node_third_element():
    poly = element_sequence("hanging_node", 3)
    assert any(np.allclose(v, (1, 0.5)) for v in poly.vertices)


def test_flatten_second_element():
    poly = element_sequence("flatten", 2)
    v = {tuple(np.round(x, 12)) for x in poly.vertices}
    assert {(0.0, 1.0), (1.0, 0.5), (-1.0, 0.5)} <= v


@pytest.mark.parametrize("family, index", [("other", 1), ("flatten", 0), ("flatten", 6), ("hanging_node", 2.0)])
def test_element_sequence_rejects(family, index):
    with pytest.raises(InvalidArgument):
        element_sequence(family, index)


@pytest.mark.parametrize("level, count", [(0, 4), (1, 16), (2, 64)])
def test_square_fan_counts(square, level, count):
    mesh = subtriangulate(square, level, method="fan")
    assert mesh.n_triangles == count
    assert mesh.areas.sum() == pytest.approx(1.0)
    assert np.all(mesh.areas > 0)


def test_hanging_node_earclip_three_triangles():
    poly = element_sequence("hanging_node", 1)
    mesh = subtriangulate(poly, 0, method="earclip")
    assert mesh.n_triangles == 3
    assert np.all(mesh.areas > 1e-12)
    assert mesh.areas.sum() == pytest.approx(poly.area)


@pytest.mark.parametrize("family", ["hanging_node", "flatten"])
@pytest.mark.parametrize("index", [1, 3, 5])
def test_quality_mesh_covers_polygon(family, index):
    poly = element_sequence(family, index)
    mesh = subtriangulate(poly, 1, method="quality", max_area=poly.area / 16)
    assert mesh.areas.sum() == pytest.approx(poly.area, rel=1e-12)
    # boundary edges tile the perimeter exactly once
    pts = mesh.points[mesh.boundary_edges]
    assert np.linalg.norm(pts[:, 1] - pts[:, 0], axis=1).sum() == pytest.approx(poly.perimeter)
    for e in range(poly.n_edges):
        sel = mesh.boundary_parent == e
        t = np.sort(mesh.boundary_params[sel].ravel())
        assert t[0] == pytest.approx(0.0) and t[-1] == pytest.approx(1.0)


def test_boundary_params_match_points(pentagon):
    mesh = subtriangulate(pentagon, 2, method="quality")
    for k, (a, b) in enumerate(mesh.boundary_edges):
        e = mesh.boundary_parent[k]
        t0, t1 = mesh.boundary_params[k]
        np.testing.assert_allclose(mesh.points[a], pentagon.edge_point(e, t0), atol=1e-13)
        np.testing.assert_allclose(mesh.points[b], pentagon.edge_point(e, t1), atol=1e-13)


def test_fan_rejected_outside_kernel():
    poly = build_polygon([(0, 0), (4, 0), (4, 1), (1, 1), (1, 4), (0, 4)])
    with pytest.raises(TriangulationFailure):
        subtriangulate(poly, 0, method="fan")
    assert subtriangulate(poly, 0, method="auto").areas.sum() == pytest.approx(poly.area)


def test_square_rho_star(square):
    assert regularity_report(square).rho_star == pytest.approx(1 / np.sqrt(2.0), rel=1e-8)


def test_hanging_node_rho_decreases():
    rho = [regularity_report(element_sequence("hanging_node", i)).rho_star for i in range(1, 6)]
    assert rho[4] < rho[1]
    assert all(a >= b - 1e-12 for a, b in zip(rho, rho[1:]))


@pytest.mark.parametrize("scale, angle, shift", [(1.0, 0.0, (0, 0)), (0.01, 0.7, (3, -2)), (250.0, -2.1, (1e3, 5))])
def test_rho_similarity_invariant(hexagon, scale, angle, shift):
    ref = regularity_report(hexagon).rho_star
    moved = regularity_report(hexagon.transformed(scale, angle, shift)).rho_star
    assert moved == pytest.approx(ref, rel=1e-8)


def test_kernel_of_convex_polygon_is_itself(hexagon):
    ker = kernel_polygon(hexagon)
    w = np.roll(ker, -1, axis=0)
    area = 0.5 * np.sum(ker[:, 0] * w[:, 1] - w[:, 0] * ker[:, 1])
    assert area == pytest.approx(hexagon.area, rel=1e-10)


def test_kernel_of_l_shape():
    # kernel of the L is the unit square at the corner
    poly = build_polygon([(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)])
    ker = kernel_polygon(poly)
    np.testing.assert_allclose(ker.min(axis=0), [0, 0], atol=1e-12)
    np.testing.assert_allclose(ker.max(axis=0), [1, 1], atol=1e-12)
    c, r = chebyshev_center(poly)
    assert r == pytest.approx(0.5)
    np.testing.assert_allclose(c, [0.5, 0.5], atol=1e-9)


def test_refinement_halves_edges(square):
    m0 = subtriangulate(square, 0, method="fan")
    m1 = m0.refine()
    assert m1.level == 1
    assert len(m1.boundary_edges) == 2 * len(m0.boundary_edges)
    np.testing.assert_allclose(np.sort(m1.areas), np.sort(np.repeat(m0.areas / 4, 4)))


def test_polygon_json_roundtrip(pentagon):
    from vemstab.geometry import Polygon

    back = Polygon.from_json(pentagon.to_json())
    assert back.key == pentagon.key
    with pytest.raises(InvalidGeometry):
        Polygon.from_json('{"points": []}')
