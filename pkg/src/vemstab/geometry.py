"""Polygons, the two degenerating element families, subtriangulations and
mesh-regularity diagnostics."""

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import linprog

from .errors import InvalidArgument, InvalidGeometry, TriangulationFailure

FAMILIES = ("hanging_node", "flatten")
_HANGING_Y = (2.0, 1.0, 0.5, 0.25, 0.125)
_FLATTEN_T = (1.0, 0.5, 0.25, 0.125, 0.0625)


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _segments_intersect(p1, p2, q1, q2, tol):
    d1 = _cross(p2 - p1, q1 - p1)
    d2 = _cross(p2 - p1, q2 - p1)
    d3 = _cross(q2 - q1, p1 - q1)
    d4 = _cross(q2 - q1, p2 - q1)
    if ((d1 > tol and d2 < -tol) or (d1 < -tol and d2 > tol)) and (
        (d3 > tol and d4 < -tol) or (d3 < -tol and d4 > tol)
    ):
        return True

    def on_segment(a, b, c, d):
        return abs(d) <= tol and min(a[0], b[0]) - tol <= c[0] <= max(a[0], b[0]) + tol and (
            min(a[1], b[1]) - tol <= c[1] <= max(a[1], b[1]) + tol
        )

    return (
        on_segment(p1, p2, q1, d1)
        or on_segment(p1, p2, q2, d2)
        or on_segment(q1, q2, p1, d3)
        or on_segment(q1, q2, p2, d4)
    )


@dataclass(frozen=True, eq=False)
class Polygon:
    """A simple polygon with counterclockwise vertex loop.

    Build instances through :func:`build_polygon`, which validates and
    reorients the input.
    """

    vertices: np.ndarray

    @property
    def n_vertices(self):
        return len(self.vertices)

    n_edges = n_vertices

    @cached_property
    def edges(self):
        n = self.n_vertices
        return tuple((i, (i + 1) % n) for i in range(n))

    @cached_property
    def edge_vectors(self):
        return _readonly(np.roll(self.vertices, -1, axis=0) - self.vertices)

    @cached_property
    def edge_lengths(self):
        return _readonly(np.linalg.norm(self.edge_vectors, axis=1))

    @cached_property
    def normals(self):
        """Outward unit normals, one per edge."""
        t = self.edge_vectors / self.edge_lengths[:, None]
        return _readonly(np.column_stack([t[:, 1], -t[:, 0]]))

    @cached_property
    def area(self):
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        return 0.5 * float(np.sum(v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]))

    @cached_property
    def centroid(self):
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        c = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
        cx = np.sum((v[:, 0] + w[:, 0]) * c) / (6.0 * self.area)
        cy = np.sum((v[:, 1] + w[:, 1]) * c) / (6.0 * self.area)
        return _readonly([cx, cy])

    @cached_property
    def diameter(self):
        v = self.vertices
        d = np.linalg.norm(v[:, None, :] - v[None, :, :], axis=2)
        return float(d.max())

    @property
    def h(self):
        return self.diameter

    @cached_property
    def perimeter(self):
        return float(self.edge_lengths.sum())

    @cached_property
    def key(self):
        """Stable hash of the vertex coordinates."""
        return hashlib.sha256(np.ascontiguousarray(self.vertices).tobytes()).hexdigest()[:16]

    def edge_point(self, e, t):
        """Point at parameter t in [0, 1] along edge e."""
        t = np.asarray(t, dtype=float)
        return self.vertices[e] + t[..., None] * self.edge_vectors[e]

    def transformed(self, scale=1.0, angle=0.0, shift=(0.0, 0.0)):
        """Image under x -> scale * R(angle) x + shift."""
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        return build_polygon(scale * self.vertices @ rot.T + np.asarray(shift, dtype=float))

    def to_json(self):
        return json.dumps({"vertices": self.vertices.tolist()})

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        if "vertices" not in data:
            raise InvalidGeometry("polygon JSON needs a 'vertices' array")
        return build_polygon(data["vertices"])

    def __repr__(self):
        return f"Polygon(n={self.n_vertices}, area={self.area:.6g}, h={self.diameter:.6g})"


def build_polygon(vertices):
    """Validate a vertex loop and return a counterclockwise :class:`Polygon`."""
    v = np.array(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2:
        raise InvalidGeometry("vertices must be a list of 2D points")
    if len(v) < 3:
        raise InvalidGeometry("a polygon needs at least 3 vertices")
    if not np.all(np.isfinite(v)):
        raise InvalidGeometry("non-finite vertex coordinates")
    scale = float(np.ptp(v, axis=0).max())
    if scale == 0.0:
        raise InvalidGeometry("zero area polygon")
    nxt = np.roll(v, -1, axis=0)
    if np.any(np.linalg.norm(nxt - v, axis=1) <= 1e-14 * scale):
        raise InvalidGeometry("consecutive vertices coincide")
    signed = 0.5 * np.sum(v[:, 0] * nxt[:, 1] - nxt[:, 0] * v[:, 1])
    if abs(signed) <= 1e-14 * scale**2:
        raise InvalidGeometry("zero area polygon")
    if signed < 0:
        v = np.concatenate([v[:1], v[:0:-1]])
    n = len(v)
    tol = 1e-12 * scale**2
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                # adjacent edges may only share their common vertex
                a, b = (i, j) if j == i + 1 else (j, i)
                p, q, r = v[a], v[(a + 1) % n], v[(b + 1) % n]
                if abs(_cross(q - p, r - q)) <= tol and np.dot(q - p, r - q) < 0:
                    raise InvalidGeometry("polygon folds back on itself")
                continue
            if _segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n], tol):
                raise InvalidGeometry(f"edges {i} and {j} intersect")
    return Polygon(_readonly(v))


def element_sequence(family, index):
    """Element `index` (1..5) of one of the two degenerating families.

    ``hanging_node``: square with a boundary node pushed toward the
    opposite side.  ``flatten``: pentagon whose height halves each step.
    """
    if family not in FAMILIES:
        raise InvalidArgument(f"unknown family {family!r}; expected one of {FAMILIES}")
    if not isinstance(index, (int, np.integer)) or not 1 <= index <= 5:
        raise InvalidArgument("index must be an integer in 1..5")
    if family == "hanging_node":
        y = _HANGING_Y[index - 1]
        return build_polygon([(0, 0), (2, 0), (2, 2), (1, y), (0, 2)])
    t = _FLATTEN_T[index - 1]
    return build_polygon([(-0.5, 0), (0.5, 0), (1, t), (0, 2 * t), (-1, t)])


# --------------------------------------------------------------------------
# kernel and regularity


def kernel_polygon(polygon):
    """Kernel of the polygon (points that see the whole polygon) as a vertex array.

    Computed by clipping the bounding box against every inward edge
    half-plane. Returns an empty (0, 2) array when the kernel is empty.
    """
    v = polygon.vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    region = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    tol = 1e-13 * polygon.diameter
    for e in range(polygon.n_edges):
        n = polygon.normals[e]
        offset = float(n @ v[e])
        dist = region @ n - offset  # > 0 means outside
        if len(region) == 0:
            break
        out = []
        m = len(region)
        for k in range(m):
            a, b = region[k], region[(k + 1) % m]
            da, db = dist[k], dist[(k + 1) % m]
            if da <= tol:
                out.append(a)
            if (da < -tol and db > tol) or (da > tol and db < -tol):
                s = da / (da - db)
                out.append(a + s * (b - a))
        region = np.array(out).reshape(-1, 2)
    if len(region) >= 3:
        w = np.roll(region, -1, axis=0)
        area = 0.5 * np.sum(region[:, 0] * w[:, 1] - w[:, 0] * region[:, 1])
        if area <= 1e-14 * polygon.diameter**2:
            return np.zeros((0, 2))
        return region
    return np.zeros((0, 2))


def chebyshev_center(polygon):
    """Center and radius of the largest disk inside the kernel, or (None, 0.0)."""
    v = polygon.vertices
    normals = polygon.normals
    b = np.einsum("ij,ij->i", normals, v)
    # maximize r subject to n.c + r <= n.v_e for every edge
    a_ub = np.column_stack([normals, np.ones(len(b))])
    res = linprog(
        c=[0.0, 0.0, -1.0],
        A_ub=a_ub,
        b_ub=b,
        bounds=[(None, None), (None, None), (0.0, None)],
        method="highs",
    )
    if not res.success or res.x[2] <= 0.0:
        return None, 0.0
    return res.x[:2], float(res.x[2])


@dataclass(frozen=True)
class RegularityReport:
    rho_star: float
    min_edge_ratio: float


def regularity_report(polygon):
    """Star-shapedness ratio and minimum edge ratio of a polygon."""
    _, r = chebyshev_center(polygon)
    rho = min(max(2.0 * r / polygon.diameter, 0.0), 1.0)
    ratio = float(polygon.edge_lengths.min() / polygon.diameter)
    return RegularityReport(rho_star=rho, min_edge_ratio=ratio)


# --------------------------------------------------------------------------
# triangulations


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming triangulation of a polygon.

    ``boundary_edges[k]`` lies on polygon edge ``boundary_parent[k]``
    between the edge parameters ``boundary_params[k]``.
    """

    points: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_parent: np.ndarray
    boundary_params: np.ndarray
    level: int = 0
    polygon: Polygon = field(default=None, repr=False)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @cached_property
    def areas(self):
        p = self.points[self.triangles]
        return 0.5 * _cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    def refine(self):
        """Uniform red refinement: every triangle into four."""
        tris = self.triangles
        npts = len(self.points)
        pairs = np.concatenate([tris[:, [1, 2]], tris[:, [2, 0]], tris[:, [0, 1]]])
        key = np.sort(pairs, axis=1)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.ravel()
        mids = 0.5 * (self.points[uniq[:, 0]] + self.points[uniq[:, 1]])
        points = np.vstack([self.points, mids])
        m = len(tris)
        m0, m1, m2 = (npts + inv[k * m : (k + 1) * m] for k in range(3))
        a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
        new = np.concatenate(
            [
                np.column_stack([a, m2, m1]),
                np.column_stack([m2, b, m0]),
                np.column_stack([m1, m0, c]),
                np.column_stack([m0, m1, m2]),
            ]
        )
        bkey = np.sort(self.boundary_edges, axis=1)
        idx = np.searchsorted(uniq[:, 0] * npts + uniq[:, 1], bkey[:, 0] * npts + bkey[:, 1])
        bmid = npts + idx
        be = self.boundary_edges
        t0, t1 = self.boundary_params[:, 0], self.boundary_params[:, 1]
        tm = 0.5 * (t0 + t1)
        bedges = np.concatenate([np.column_stack([be[:, 0], bmid]), np.column_stack([bmid, be[:, 1]])])
        bparams = np.concatenate([np.column_stack([t0, tm]), np.column_stack([tm, t1])])
        bparent = np.concatenate([self.boundary_parent, self.boundary_parent])
        return TriMesh(points, new, bedges, bparent, bparams, self.level + 1, self.polygon)

    def to_json(self):
        return json.dumps(
            {
                "points": self.points.tolist(),
                "triangles": self.triangles.tolist(),
                "boundary_edges": self.boundary_edges.tolist(),
                "boundary_parent": self.boundary_parent.tolist(),
                "level": self.level,
            }
        )


def _point_in_polygon(pt, v):
    inside = False
    n = len(v)
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        if (a[1] > pt[1]) != (b[1] > pt[1]):
            x = a[0] + (pt[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            if pt[0] < x:
                inside = not inside
    return inside


def _strictly_in_kernel(polygon, pt):
    d = polygon.normals @ pt - np.einsum("ij,ij->i", polygon.normals, polygon.vertices)
    return bool(np.all(d < -1e-10 * polygon.diameter))


def _min_angle(a, b, c):
    angs = []
    for p, q, r in ((a, b, c), (b, c, a), (c, a, b)):
        u, w = q - p, r - p
        cosv = np.dot(u, w) / (np.linalg.norm(u) * np.linalg.norm(w))
        angs.append(np.arccos(np.clip(cosv, -1.0, 1.0)))
    return min(angs)


def _earclip(polygon):
    v = polygon.vertices
    idx = list(range(len(v)))
    tris = []
    tol = 1e-12 * polygon.diameter**2
    while len(idx) > 3:
        best, best_q = None, -1.0
        m = len(idx)
        for k in range(m):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % m]
            a, b, c = v[i0], v[i1], v[i2]
            if _cross(b - a, c - b) <= tol:
                continue
            ok = True
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = v[j]
                if (
                    _cross(b - a, p - a) >= -tol
                    and _cross(c - b, p - b) >= -tol
                    and _cross(a - c, p - c) >= -tol
                ):
                    ok = False
                    break
            if ok:
                q = _min_angle(a, b, c)
                if q > best_q:
                    best, best_q = k, q
        if best is None:
            raise TriangulationFailure("ear clipping found no ear")
        m = len(idx)
        tris.append((idx[best - 1], idx[best], idx[(best + 1) % m]))
        idx.pop(best)
    a, b, c = (v[i] for i in idx)
    if _cross(b - a, c - a) <= tol:
        raise TriangulationFailure("ear clipping produced a degenerate triangle")
    tris.append(tuple(idx))
    return v.copy(), np.array(tris, dtype=np.int64)


def _fan(polygon, center):
    v = polygon.vertices
    n = len(v)
    pts = np.vstack([v, center])
    tris = np.array([(n, i, (i + 1) % n) for i in range(n)], dtype=np.int64)
    return pts, tris


def _quality(polygon, min_angle, max_area):
    import triangle

    n = polygon.n_vertices
    seg = np.array(polygon.edges)
    opts = f"pq{min_angle:g}"
    if max_area is not None:
        opts += f"a{max_area:.17g}"
    out = triangle.triangulate(
        {
            "vertices": np.array(polygon.vertices, dtype=float),
            "segments": np.array(seg, dtype=np.int32),
            "segment_markers": np.arange(1, n + 1, dtype=np.int32)[:, None],
        },
        opts + "Q",
    )
    return out["vertices"], out["triangles"].astype(np.int64)


def _boundary_from(polygon, points, tris):
    """Recover boundary edges, their parent polygon edges and parameters."""
    pairs = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(pairs, axis=1)
    uniq, counts = np.unique(key, axis=0, return_counts=True)
    once = {tuple(k) for k in uniq[counts == 1]}
    bedges = np.array([pr for pr in pairs if tuple(sorted(pr)) in once], dtype=np.int64)
    v, ev, lens = polygon.vertices, polygon.edge_vectors, polygon.edge_lengths
    parents, params = [], []
    tol = 1e-9 * polygon.diameter
    for a, b in bedges:
        pa, pb = points[a], points[b]
        found = None
        for e in range(polygon.n_edges):
            t = ev[e] / lens[e]
            nrm = np.array([t[1], -t[0]])
            if abs(nrm @ (pa - v[e])) < tol and abs(nrm @ (pb - v[e])) < tol:
                ta = (pa - v[e]) @ ev[e] / lens[e] ** 2
                tb = (pb - v[e]) @ ev[e] / lens[e] ** 2
                if -1e-9 <= min(ta, tb) and max(ta, tb) <= 1 + 1e-9:
                    found = (e, np.clip(ta, 0, 1), np.clip(tb, 0, 1))
                    break
        if found is None:
            raise TriangulationFailure("boundary edge not on the polygon boundary")
        parents.append(found[0])
        params.append(found[1:])
    return bedges, np.array(parents, dtype=np.int64), np.array(params, dtype=float)


def subtriangulate(polygon, refine_level=0, method="auto", min_angle=28.0, max_area=None):
    """Triangulate a polygon and red-refine it `refine_level` times.

    method
        ``"fan"``: fan from the centroid (must lie strictly inside the kernel);
        ``"earclip"``: ear clipping on the polygon vertices;
        ``"quality"``: constrained Delaunay with a minimum-angle bound;
        ``"auto"``: fan when possible, ear clipping otherwise.
    """
    if refine_level < 0:
        raise InvalidArgument("refine_level must be >= 0")
    if method == "auto":
        method = "fan" if _strictly_in_kernel(polygon, polygon.centroid) else "earclip"
    if method == "fan":
        if not _strictly_in_kernel(polygon, polygon.centroid):
            raise TriangulationFailure("centroid not inside the polygon kernel")
        pts, tris = _fan(polygon, polygon.centroid)
    elif method == "earclip":
        pts, tris = _earclip(polygon)
    elif method == "quality":
        pts, tris = _quality(polygon, min_angle, max_area)
    else:
        raise InvalidArgument(f"unknown triangulation method {method!r}")
    areas = 0.5 * _cross(pts[tris[:, 1]] - pts[tris[:, 0]], pts[tris[:, 2]] - pts[tris[:, 0]])
    if np.any(areas <= 1e-14 * polygon.diameter**2):
        raise TriangulationFailure("degenerate triangle in the initial triangulation")
    bedges, parents, params = _boundary_from(polygon, pts, tris)
    mesh = TriMesh(np.asarray(pts, float), tris, bedges, parents, params, 0, polygon)
    for _ in range(refine_level):
        mesh = mesh.refine()
    return mesh
