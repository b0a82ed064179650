"""Taylor-Hood (P2 velocity / P1 pressure) Stokes solver on a polygon's
subtriangulation.

Solves  -Lap u - grad s = f,  div u = g  in K,  u = trace on dK,
with zero-mean pressure (pinned during the solve, shifted afterwards). The
weak form is (grad u, grad v) + (s, div v) = (f, v), (div u, t) = (g, t).
Velocity coefficient vectors are component-major: all x values, then all y.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .errors import CompatibilityError, ContinuityError, InvalidArgument, SolverFailure
from .quadrature import map_to_triangles, triangle_rule


class FemSpace:
    """P2-P1 spaces on a :class:`~vemstab.geometry.TriMesh`."""

    def __init__(self, trimesh):
        self.mesh = trimesh
        pts = trimesh.points
        tris = trimesh.triangles
        nv = len(pts)
        pairs = np.concatenate([tris[:, [1, 2]], tris[:, [2, 0]], tris[:, [0, 1]]])
        key = np.sort(pairs, axis=1)
        edges, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.ravel()
        m = len(tris)
        self.edges = edges
        self.n_vertices = nv
        self.n_nodes = nv + len(edges)
        self.tri_nodes = np.column_stack([tris, nv + inv[:m], nv + inv[m : 2 * m], nv + inv[2 * m :]])
        self.node_points = np.vstack([pts, 0.5 * (pts[edges[:, 0]] + pts[edges[:, 1]])])

        # boundary nodes with parent polygon edge and parameter
        be = trimesh.boundary_edges
        bkey = np.sort(be, axis=1)
        eid = np.searchsorted(edges[:, 0] * nv + edges[:, 1], bkey[:, 0] * nv + bkey[:, 1])
        mids = nv + eid
        t0, t1 = trimesh.boundary_params[:, 0], trimesh.boundary_params[:, 1]
        nodes = np.concatenate([be[:, 0], mids, be[:, 1]])
        parents = np.concatenate([trimesh.boundary_parent] * 3)
        params = np.concatenate([t0, 0.5 * (t0 + t1), t1])
        order = np.argsort(nodes, kind="stable")
        nodes, parents, params = nodes[order], parents[order], params[order]
        first = np.concatenate([[True], nodes[1:] != nodes[:-1]])
        self.boundary_nodes = nodes[first]
        self.boundary_parent = parents[first]
        self.boundary_param = params[first]
        # every (node, parent, param) incidence, for continuity checks
        self._boundary_incidence = (nodes, parents, params)
        self.boundary_edge_nodes = np.column_stack([be[:, 0], be[:, 1], mids])
        self.boundary_edge_parent = trimesh.boundary_parent

    @property
    def n_velocity(self):
        return 2 * self.n_nodes

    @property
    def n_pressure(self):
        return self.n_vertices

    # ------------------------------------------------------------------ assembly

    @cached_property
    def _element(self):
        return kernels.element_matrices(self.mesh.points, self.mesh.triangles)

    @cached_property
    def stiffness(self):
        """Scalar P2 stiffness matrix (n_nodes x n_nodes)."""
        ke, _ = self._element
        tn = self.tri_nodes
        rows = np.repeat(tn, 6, axis=1).ravel()
        cols = np.tile(tn, (1, 6)).ravel()
        n = self.n_nodes
        return sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(n, n))

    @cached_property
    def divergence(self):
        """Blocks (D_x, D_y) with D_c[t, i] = int lambda_t d_c phi_i."""
        _, de = self._element
        tn = self.tri_nodes
        tv = self.mesh.triangles
        rows = np.repeat(tv, 6, axis=1).ravel()
        cols = np.tile(tn, (1, 3)).ravel()
        shape = (self.n_vertices, self.n_nodes)
        return tuple(sp.csr_matrix((de[..., c].ravel(), (rows, cols)), shape=shape) for c in range(2))

    @cached_property
    def pressure_mean(self):
        """c_t = int lambda_t."""
        c = np.zeros(self.n_vertices)
        np.add.at(c, self.mesh.triangles.ravel(), np.repeat(self.mesh.areas / 3.0, 3))
        return c

    @cached_property
    def mass(self):
        """Scalar P2 mass matrix."""
        q = self.quadrature(4)
        n = self.n_nodes
        ev = q["values"]  # (m, nq, 6)
        me = np.einsum("tq,tqi,tqj->tij", q["weights"], ev, ev)
        tn = self.tri_nodes
        rows = np.repeat(tn, 6, axis=1).ravel()
        cols = np.tile(tn, (1, 6)).ravel()
        return sp.csr_matrix((me.ravel(), (rows, cols)), shape=(n, n))

    def quadrature(self, degree):
        """Quadrature points/weights (m, nq, .) with P2 values and gradients."""
        cache = self.__dict__.setdefault("_quad", {})
        if degree in cache:
            return cache[degree]
        rule = triangle_rule(degree)
        pts, wts = map_to_triangles(rule, self.mesh.points[self.mesh.triangles])
        lam = np.column_stack([1 - rule.points.sum(axis=1), rule.points])
        vals = kernels.p2_values(lam)  # (nq, 6)
        dl = kernels.p2_dlam(lam)  # (nq, 6, 3)
        glam, _ = kernels.barycentric_gradients(self.mesh.points, self.mesh.triangles)
        grads = np.einsum("qik,tkc->tqic", dl, glam)
        out = {
            "points": pts,
            "weights": wts,
            "values": np.broadcast_to(vals, (len(wts), len(vals), 6)),
            "grads": grads,
        }
        cache[degree] = out
        return out

    def _eval_operator(self, degree, what="values", weighted=True):
        """Sparse map from nodal values to (weighted) point values at all quadrature points."""
        cache = self.__dict__.setdefault("_evalops", {})
        key = (degree, what, weighted)
        if key in cache:
            return cache[key]
        q = self.quadrature(degree)
        m, nq = q["weights"].shape
        rows = np.repeat(np.arange(m * nq), 6)
        cols = np.repeat(self.tri_nodes, nq, axis=0).ravel()
        w = q["weights"].reshape(-1, 1) if weighted else 1.0
        if what == "values":
            ops = sp.csr_matrix(((q["values"].reshape(-1, 6) * w).ravel(), (rows, cols)), shape=(m * nq, self.n_nodes))
        else:
            ops = tuple(
                sp.csr_matrix(((q["grads"][..., c].reshape(-1, 6) * w).ravel(), (rows, cols)), shape=(m * nq, self.n_nodes))
                for c in range(2)
            )
        cache[key] = ops
        return ops

    def vector_moments(self, basis, degree):
        """Matrix Q (basis.dim, n_velocity) with Q u = int_K u . b_k."""
        E = self._eval_operator(degree, "values")
        pts = self.quadrature(degree)["points"].reshape(-1, 2)
        bv = basis(pts)  # (npts, nb, 2)
        return np.hstack([np.asarray((E.T @ bv[:, :, c]).T) for c in range(2)])

    def divergence_moments(self, scalar, degree):
        """Matrix (scalar.dim, n_velocity) with rows int_K div u * m_k."""
        Ex, Ey = self._eval_operator(degree, "grads")
        pts = self.quadrature(degree)["points"].reshape(-1, 2)
        mv = scalar(pts)
        return np.hstack([np.asarray((Ex.T @ mv).T), np.asarray((Ey.T @ mv).T)])

    def load_vector(self, f, degree):
        """int f . phi_i for a vector callable f, component-major."""
        E = self._eval_operator(degree, "values")
        pts = self.quadrature(degree)["points"].reshape(-1, 2)
        fv = np.asarray(f(pts), dtype=float).reshape(-1, 2)
        return np.concatenate([E.T @ fv[:, 0], E.T @ fv[:, 1]])

    def pressure_load(self, g, degree):
        """int g * lambda_t for a scalar callable g."""
        rule = triangle_rule(degree)
        pts, wts = map_to_triangles(rule, self.mesh.points[self.mesh.triangles])
        lam = np.column_stack([1 - rule.points.sum(axis=1), rule.points])
        gv = np.asarray(g(pts.reshape(-1, 2)), dtype=float).reshape(wts.shape)
        contrib = np.einsum("tq,tq,qk->tk", wts, gv, lam)
        out = np.zeros(self.n_vertices)
        np.add.at(out, self.mesh.triangles.ravel(), contrib.ravel())
        return out

    def boundary_flux(self, trace):
        """int_dK u . n for boundary values `trace` (n_boundary_nodes, 2), exact for P2."""
        poly = self.mesh.polygon
        full = np.zeros((self.n_nodes, 2))
        full[self.boundary_nodes] = trace
        a, b, mid = self.boundary_edge_nodes.T
        L = np.linalg.norm(self.node_points[b] - self.node_points[a], axis=1)
        n = poly.normals[self.boundary_edge_parent]
        un = np.einsum("kc,kc->k", full[a] + 4 * full[mid] + full[b], n)
        return float(np.sum(L / 6.0 * un))

    # ------------------------------------------------------------------ solve

    @cached_property
    def _partition(self):
        nn = self.n_nodes
        is_b = np.zeros(nn, dtype=bool)
        is_b[self.boundary_nodes] = True
        bdofs = np.concatenate([np.flatnonzero(is_b), nn + np.flatnonzero(is_b)])
        fdofs = np.concatenate([np.flatnonzero(~is_b), nn + np.flatnonzero(~is_b)])
        return fdofs, bdofs

    @cached_property
    def _blocks(self):
        K = self.stiffness
        Kv = sp.block_diag([K, K], format="csr")
        Dx, Dy = self.divergence
        D = sp.hstack([Dx, Dy], format="csr")
        return Kv, D

    @cached_property
    def factorization(self):
        """Sparse LU of the reduced saddle-point matrix, reused across solves.

        The pressure at vertex 0 is pinned and its divergence equation
        dropped; the zero-mean shift is applied after the solve. A dense
        multiplier row would ruin the fill-reducing ordering.
        """
        Kv, D = self._blocks
        fd, _ = self._partition
        Kff = Kv[fd][:, fd]
        Df = D[1:][:, fd]
        M = sp.bmat([[Kff, Df.T], [Df, None]], format="csc")
        self._saddle = M
        try:
            lu = spla.splu(M, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))
        except RuntimeError:
            lu = None
        if lu is None or not self._lu_ok(lu, M):
            try:
                lu = spla.splu(M, permc_spec="COLAMD")
            except RuntimeError as exc:
                raise SolverFailure(f"saddle-point factorization failed: {exc}") from exc
        return lu

    @staticmethod
    def _lu_ok(lu, M):
        x = np.random.default_rng(0).standard_normal(M.shape[0])
        b = M @ x
        y = lu.solve(b)
        return bool(np.all(np.isfinite(y)) and np.abs(M @ y - b).max() <= 1e-9 * np.abs(b).max())

    def solve_many(self, loads, divs, traces, check_residual=True):
        """Solve for several right-hand sides sharing the factorization.

        loads  (k, n_velocity) velocity loads int f.phi
        divs   (k, n_pressure) pressure loads int g*lambda
        traces (k, n_boundary_nodes, 2) Dirichlet values

        The returned ``multiplier`` is the defect of the dropped divergence
        equation, i.e. the mismatch between int g and the boundary flux.
        """
        Kv, D = self._blocks
        fd, bd = self._partition
        lu = self.factorization
        nn = self.n_nodes
        loads = np.atleast_2d(loads)
        divs = np.atleast_2d(divs)
        k = loads.shape[0]
        ub = np.zeros((k, self.n_velocity))
        bn = self.boundary_nodes
        ub[:, bn] = traces[:, :, 0]
        ub[:, nn + bn] = traces[:, :, 1]
        rhs_u = loads[:, fd] - (Kv[fd][:, bd] @ ub[:, bd].T).T
        rhs_p = divs - (D[:, bd] @ ub[:, bd].T).T
        rhs = np.hstack([rhs_u, rhs_p[:, 1:]])
        sol = lu.solve(np.ascontiguousarray(rhs.T))
        if not np.all(np.isfinite(sol)):
            raise SolverFailure("non-finite solution from saddle-point solve")
        if check_residual:
            res = self._saddle @ sol - rhs.T
            scale = np.abs(rhs).max() + 1e-300
            if np.abs(res).max() > 1e-8 * scale:
                raise SolverFailure(f"saddle-point residual {np.abs(res).max():.3e} too large")
        u = ub.copy()
        u[:, fd] = sol[: len(fd)].T
        pres = np.zeros((k, self.n_pressure))
        pres[:, 1:] = sol[len(fd) :].T
        pres -= (pres @ self.pressure_mean)[:, None] / self.mesh.polygon.area
        defect = (D @ u.T).T[:, 0] - divs[:, 0]
        return [FemField(self, u[i], pres[i], float(defect[i])) for i in range(k)]


@dataclass(frozen=True, eq=False)
class FemField:
    space: FemSpace
    velocity: np.ndarray
    pressure: np.ndarray
    multiplier: float = 0.0

    def components(self):
        n = self.space.n_nodes
        return self.velocity[:n], self.velocity[n:]

    def __add__(self, other):
        _check_space(self, other)
        return FemField(self.space, self.velocity + other.velocity, self.pressure + other.pressure)

    def scaled(self, a):
        return FemField(self.space, a * self.velocity, a * self.pressure)

    def pressure_mean(self):
        return float(self.space.pressure_mean @ self.pressure) / self.space.mesh.polygon.area


def _check_space(u, v):
    if u.space is not v.space:
        raise InvalidArgument("fields live on different FEM spaces")


def solve_stokes(space, f=None, g=None, trace=None, f_degree=6, g_degree=6, rtol=1e-10):
    """Solve one Stokes problem; see the module docstring for the equations.

    f: vector callable or None; g: scalar callable or None; trace: boundary
    node values (n_boundary_nodes, 2), a callable of points, or None (zero).
    """
    nb = len(space.boundary_nodes)
    if trace is None:
        tr = np.zeros((nb, 2))
    elif callable(trace):
        tr = np.asarray(trace(space.node_points[space.boundary_nodes]), dtype=float).reshape(nb, 2)
    else:
        tr = np.asarray(trace, dtype=float).reshape(nb, 2)
    load = space.load_vector(f, f_degree) if f is not None else np.zeros(space.n_velocity)
    gl = space.pressure_load(g, g_degree) if g is not None else np.zeros(space.n_pressure)
    flux = space.boundary_flux(tr)
    total = float(gl.sum())
    scale = abs(flux) + abs(total) + np.abs(tr).max(initial=0.0) * space.mesh.polygon.perimeter + 1e-300
    if abs(total - flux) > rtol * scale:
        raise CompatibilityError(f"int g = {total:.6e} but boundary flux = {flux:.6e}")
    return space.solve_many(load[None], gl[None], tr[None])[0]


def h1_semi_inner(u, v):
    _check_space(u, v)
    K = u.space.stiffness
    ux, uy = u.components()
    vx, vy = v.components()
    return float(ux @ (K @ vx) + uy @ (K @ vy))


def l2_inner(u, v):
    _check_space(u, v)
    M = u.space.mass
    ux, uy = u.components()
    vx, vy = v.components()
    return float(ux @ (M @ vx) + uy @ (M @ vy))


def boundary_l2_inner(u, v, edges=None):
    """int over dK (or the listed polygon edges) of u . v; exact for P2 traces."""
    _check_space(u, v)
    sp_ = u.space
    a, b, mid = sp_.boundary_edge_nodes.T
    sel = np.ones(len(a), dtype=bool) if edges is None else np.isin(sp_.boundary_edge_parent, list(edges))
    a, b, mid = a[sel], b[sel], mid[sel]
    L = np.linalg.norm(sp_.node_points[b] - sp_.node_points[a], axis=1)
    n = sp_.n_nodes
    total = 0.0
    # 1D P2 mass on (a, b, mid): L/30 [[4,-1,2],[-1,4,2],[2,2,16]]
    M = np.array([[4, -1, 2], [-1, 4, 2], [2, 2, 16]]) / 30.0
    for c in range(2):
        uu = np.stack([u.velocity[c * n + a], u.velocity[c * n + b], u.velocity[c * n + mid]], axis=1)
        vv = np.stack([v.velocity[c * n + a], v.velocity[c * n + b], v.velocity[c * n + mid]], axis=1)
        total += float(np.einsum("k,ki,ij,kj->", L, uu, M, vv))
    return total


def dirichlet_trace_from_edge_polys(space, edge_polys, tol=1e-12):
    """Boundary node values from per-edge vector polynomials.

    `edge_polys[e]` maps edge parameters t in [0, 1] to values (len(t), 2).
    """
    poly = space.mesh.polygon
    if len(edge_polys) != poly.n_edges:
        raise InvalidArgument("need one polynomial per polygon edge")
    for e in range(poly.n_edges):
        end = np.asarray(edge_polys[e](np.array([1.0])), dtype=float).reshape(2)
        start = np.asarray(edge_polys[(e + 1) % poly.n_edges](np.array([0.0])), dtype=float).reshape(2)
        if np.abs(end - start).max() > tol * max(1.0, np.abs(end).max()):
            raise ContinuityError(f"edge polynomials disagree at vertex {(e + 1) % poly.n_edges}")
    out = np.zeros((len(space.boundary_nodes), 2))
    for e in range(poly.n_edges):
        sel = space.boundary_parent == e
        if np.any(sel):
            out[sel] = np.asarray(edge_polys[e](space.boundary_param[sel]), dtype=float).reshape(-1, 2)
    return out


def l2_error(u, exact, degree=6):
    """||u_h - exact||_0 with `exact` mapping points (n, 2) -> (n, 2)."""
    sp_ = u.space
    q = sp_.quadrature(degree)
    E = sp_._eval_operator(degree, "values", weighted=False)
    ux, uy = u.components()
    ex = np.asarray(exact(q["points"].reshape(-1, 2)), dtype=float)
    d = np.column_stack([E @ ux, E @ uy]) - ex
    return float(np.sqrt(q["weights"].ravel() @ np.sum(d * d, axis=1)))


def h1_error(u, grad_exact, degree=6):
    """|u_h - exact|_1 with `grad_exact` mapping points to (n, 2, 2) arrays [component, direction]."""
    sp_ = u.space
    q = sp_.quadrature(degree)
    Ex, Ey = sp_._eval_operator(degree, "grads", weighted=False)
    ux, uy = u.components()
    g = np.stack([np.column_stack([Ex @ ux, Ey @ ux]), np.column_stack([Ex @ uy, Ey @ uy])], axis=1)
    d = g - np.asarray(grad_exact(q["points"].reshape(-1, 2)), dtype=float)
    return float(np.sqrt(np.einsum("q,qij,qij->", q["weights"].ravel(), d, d)))
