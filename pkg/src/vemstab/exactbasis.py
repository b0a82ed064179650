"""Finite element realization of the canonical virtual element basis.

The auxiliary psi functions solve local Stokes problems with polynomial
data and are computed with the Taylor-Hood oracle. The canonical basis
phi_j (dof_k(phi_j) = delta_kj) is a linear combination of them; the
combination coefficients come from the moment conditions.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import AssemblyError, ExpansionError
from .femstokes import FemField, FemSpace
from .geometry import TriMesh, build_polygon, subtriangulate
from .polynomials import derivative_matrices, eval_monomials, mass_matrix, n_monomials, polygon_quadrature
from .quadrature import edge_gauss_legendre, map_to_triangles, triangle_rule
from .vemspace import projector_pack

log = logging.getLogger(__name__)


@dataclass(eq=False)
class PsiFamily:
    layout: object
    space: FemSpace
    velocity: np.ndarray  # (n_velocity, n_dof): columns boundary | perp | div members
    pressure: np.ndarray  # (n_pressure, n_dof)
    boundary_traces: np.ndarray  # (n_boundary_nodes, 2, n_boundary)
    quad_extra: int = 0  # added to every moment quadrature order

    def field(self, k):
        return FemField(self.space, self.velocity[:, k], self.pressure[:, k])

    @property
    def boundary(self):
        return self.velocity[:, self.layout.boundary]

    @property
    def perp(self):
        return self.velocity[:, self.layout.perp]

    @property
    def div(self):
        return self.velocity[:, self.layout.div]


def boundary_basis_traces(layout, space):
    """Values of the boundary-DoF basis traces at the FEM boundary nodes."""
    nb = len(space.boundary_nodes)
    out = np.zeros((nb, 2, layout.n_dof))
    for e in range(layout.n_edges):
        sel = np.flatnonzero(space.boundary_parent == e)
        if len(sel):
            out[sel] = layout.trace_matrix(e, space.boundary_param[sel])
    return out[:, :, layout.boundary]


def build_psi_family(layout, space, quad_extra=0):
    """Solve every psi problem with one shared factorization.

    `quad_extra` raises the quadrature order of the polynomial loads above
    the exact minimum.
    """
    poly = layout.polygon
    p = layout.p
    nd = layout.n_dof
    traces = boundary_basis_traces(layout, space)
    nbn = len(space.boundary_nodes)

    loads = np.zeros((nd, space.n_velocity))
    divs = np.zeros((nd, space.n_pressure))
    tr = np.zeros((nd, nbn, 2))
    cmean = space.pressure_mean
    for i in range(layout.n_boundary):
        tr[i] = traces[:, :, i]
        # constant divergence matching the discrete boundary flux
        divs[i] = space.boundary_flux(traces[:, :, i]) / poly.area * cmean
    if layout.n_perp:
        q = space.quadrature(p + quad_extra)
        E = space._eval_operator(p + quad_extra, "values")
        bv = layout.perp_basis(q["points"].reshape(-1, 2))  # (npts, n_perp, 2)
        loads[layout.perp] = np.hstack([(E.T @ bv[:, :, 0]).T, (E.T @ bv[:, :, 1]).T])
    m = layout.div_basis
    rule = triangle_rule(p + quad_extra)
    pts, wts = map_to_triangles(rule, space.mesh.points[space.mesh.triangles])
    lam = np.column_stack([1 - rule.points.sum(axis=1), rule.points])
    mv = m(pts.reshape(-1, 2)).reshape(wts.shape + (m.dim,))
    contrib = np.einsum("tq,tqg,qk->gtk", wts, mv, lam)
    for g in range(m.dim):
        np.add.at(divs[layout.div.start + g], space.mesh.triangles.ravel(), contrib[g].ravel())

    fields = space.solve_many(loads, divs, tr)
    vel = np.column_stack([f.velocity for f in fields])
    pres = np.column_stack([f.pressure for f in fields])
    return PsiFamily(layout, space, vel, pres, traces, quad_extra)


def _solve_checked(M, rhs, what):
    if M.size == 0:
        return np.zeros((0,) + rhs.shape[1:])
    cond = np.linalg.cond(M)
    log.debug("%s system condition number %.3e", what, cond)
    if not np.isfinite(cond) or cond > 1e14:
        raise ExpansionError(f"{what} moment matrix is singular (cond={cond:.3e})", cond)
    return np.linalg.solve(M, rhs)


@dataclass(eq=False)
class PhiBasis:
    psi: PsiFamily
    coeffs: np.ndarray  # (n_dof psi members, n_dof phi functions)
    velocity: np.ndarray  # (n_velocity, n_dof)
    perp_moment_matrix: np.ndarray
    condition: dict

    @property
    def layout(self):
        return self.psi.layout

    @property
    def space(self):
        return self.psi.space

    def field(self, j):
        return FemField(self.space, self.velocity[:, j], self.psi.pressure @ self.coeffs[:, j])


def _perp_moments(psi):
    layout = psi.layout
    Q = psi.space.vector_moments(layout.perp_basis, layout.p + 1 + psi.quad_extra) if layout.n_perp else np.zeros((0, psi.space.n_velocity))
    return Q


def expand_boundary(psi, Q=None):
    """Coefficients of the boundary-type phi functions (columns) over psi members (rows)."""
    layout = psi.layout
    Q = _perp_moments(psi) if Q is None else Q
    nd = layout.n_dof
    coef = np.zeros((nd, layout.n_boundary))
    coef[layout.boundary] = np.eye(layout.n_boundary)
    # C-type coefficients vanish: the divergence-moment system has a zero right-hand side
    if layout.n_perp:
        Mpsi = Q @ psi.perp
        coef[layout.perp] = _solve_checked(Mpsi, -(Q @ psi.boundary), "boundary expansion")
    return coef


def expand_orthogonal(psi, Q=None):
    layout = psi.layout
    Q = _perp_moments(psi) if Q is None else Q
    nd = layout.n_dof
    coef = np.zeros((nd, layout.n_perp))
    if layout.n_perp:
        Mpsi = Q @ psi.perp
        coef[layout.perp] = _solve_checked(Mpsi, layout.polygon.area * np.eye(layout.n_perp), "orthogonal expansion")
    return coef


def expand_divergence(psi, Q=None):
    layout = psi.layout
    poly = layout.polygon
    Q = _perp_moments(psi) if Q is None else Q
    nd = layout.n_dof
    coef = np.zeros((nd, layout.n_div))
    m = layout.div_basis
    Mm = mass_matrix(m, m, poly)
    C = _solve_checked(Mm, poly.area / poly.diameter * np.eye(layout.n_div), "divergence mass")
    coef[layout.div] = C
    if layout.n_perp:
        Mpsi = Q @ psi.perp
        coef[layout.perp] = _solve_checked(Mpsi, -(Q @ psi.div) @ C, "divergence expansion")
    return coef


def build_phi_basis(psi):
    layout = psi.layout
    Q = _perp_moments(psi)
    coef = np.hstack([expand_boundary(psi, Q), expand_orthogonal(psi, Q), expand_divergence(psi, Q)])
    cond = {}
    if layout.n_perp:
        cond["perp_moment"] = float(np.linalg.cond(Q @ psi.perp))
    m = layout.div_basis
    cond["div_mass"] = float(np.linalg.cond(mass_matrix(m, m, layout.polygon)))
    vel = psi.velocity @ coef
    return PhiBasis(psi, coef, vel, Q @ psi.perp if layout.n_perp else np.zeros((0, 0)), cond)


def exact_stiffness_B(phi):
    """B_ij = (grad phi_j, grad phi_i) over the FEM realization."""
    sp_ = phi.space
    n = sp_.n_nodes
    K = sp_.stiffness
    V = phi.velocity
    B = V[:n].T @ (K @ V[:n]) + V[n:].T @ (K @ V[n:])
    scale = max(np.abs(B).max(), 1e-300)
    if np.abs(B - B.T).max() > 1e-10 * scale:
        raise AssemblyError("exact stiffness matrix is not symmetric")
    return 0.5 * (B + B.T)


def fem_boundary_values(space, velocity, polygon_points_parent, params):
    """Evaluate FEM traces at points on polygon edges given by (edge, parameter)."""
    n = space.n_nodes
    a, b, mid = space.boundary_edge_nodes.T
    parent = space.boundary_edge_parent
    mesh = space.mesh
    t0, t1 = mesh.boundary_params[:, 0], mesh.boundary_params[:, 1]
    out = np.zeros((len(params), 2) + velocity.shape[1:])
    for k, (e, t) in enumerate(zip(polygon_points_parent, params)):
        cand = np.flatnonzero(
            (parent == e) & (np.minimum(t0, t1) - 1e-12 <= t) & (t <= np.maximum(t0, t1) + 1e-12)
        )
        j = cand[0]
        s = (t - t0[j]) / (t1[j] - t0[j])
        la, lb = 1 - s, s
        wa, wb, wm = la * (2 * la - 1), lb * (2 * lb - 1), 4 * la * lb
        for c in range(2):
            out[k, c] = wa * velocity[c * n + a[j]] + wb * velocity[c * n + b[j]] + wm * velocity[c * n + mid[j]]
    return out


def measured_dofs(phi):
    """DoF functionals applied to the FEM basis functions: (n_dof, n_dof)."""
    layout = phi.layout
    poly = layout.polygon
    nd = layout.n_dof
    V = phi.velocity
    out = np.zeros((nd, nd))
    nodes_e, nodes_t = [], []
    nv = poly.n_vertices
    for node in range(len(layout.node_points)):
        if node < nv:
            nodes_e.append(node)
            nodes_t.append(0.0)
        else:
            e, k = divmod(node - nv, layout.p - 1)
            nodes_e.append(e)
            nodes_t.append(layout.gl_nodes[1 + k])
    vals = fem_boundary_values(phi.space, V, nodes_e, np.array(nodes_t))
    for node in range(len(layout.node_points)):
        for c in range(2):
            out[layout.node_dof(node, c)] = vals[node, c]
    if layout.n_perp:
        out[layout.perp] = phi.space.vector_moments(layout.perp_basis, layout.p + 1) @ V / poly.area
    Qd = phi.space.divergence_moments(layout.div_basis, layout.p + 1)
    out[layout.div] = poly.diameter / poly.area * (Qd @ V)
    return out


def biorthogonality_error(phi):
    D = measured_dofs(phi)
    return float(np.abs(D - np.eye(len(D))).max())


BASE_AREA_FRACTION = 1.0 / 64.0


def fem_mesh(polygon, refine, method="quality", min_angle=28.0, base_area_fraction=BASE_AREA_FRACTION):
    """Subtriangulation used by the oracle: a quality base mesh plus `refine` uniform refinements."""
    # Mesh a normalized copy (vertex 0 at the origin, edge 0 along +x, unit
    # diameter) so that similar elements get the same mesh. The rounding
    # strips transform round-off, to which the Delaunay refinement is sensitive.
    v = polygon.vertices
    e = polygon.edge_vectors[0] / polygon.edge_lengths[0]
    rot = np.array([[e[0], e[1]], [-e[1], e[0]]])
    h = polygon.diameter
    ref = build_polygon(np.round((v - v[0]) @ rot.T / h, 12))
    max_area = None if base_area_fraction is None else ref.area * base_area_fraction
    m = subtriangulate(ref, refine, method=method, min_angle=min_angle, max_area=max_area)
    pts = h * m.points @ rot + v[0]
    # put boundary nodes back exactly on the edges of the original polygon
    n = polygon.n_vertices

    def on_edge(e, t):
        if t < 1e-12:
            return v[e]
        if t > 1 - 1e-12:
            return v[(e + 1) % n]
        return polygon.edge_point(e, t)

    for (a, b), e, (ta, tb) in zip(m.boundary_edges, m.boundary_parent, m.boundary_params):
        pts[a] = on_edge(e, ta)
        pts[b] = on_edge(e, tb)
    return TriMesh(pts, m.triangles, m.boundary_edges, m.boundary_parent, m.boundary_params, m.level, polygon)


def exact_basis(
    layout, refine=3, method="quality", min_angle=28.0, base_area_fraction=BASE_AREA_FRACTION, cache_dir=None, quad_extra=0
):
    """FEM space, psi family and canonical basis for a layout in one call.

    With `cache_dir` the psi fields and expansion coefficients are stored on
    disk and reused on later calls with the same element, p and mesh.
    """
    from . import cache

    mesh = fem_mesh(layout.polygon, refine, method, min_angle, base_area_fraction)
    space = FemSpace(mesh)
    meta = {
        "element_hash": layout.polygon.key,
        "p": layout.p,
        "refine": refine,
        "quad_order": layout.p + 1 + quad_extra,
        "mesh_tag": f"{method}:{min_angle:g}:{base_area_fraction}",
    }
    if cache_dir is not None:
        hit = cache.load(cache_dir, meta)
        if hit is not None and hit["velocity"].shape == (space.n_velocity, layout.n_dof):
            psi = PsiFamily(layout, space, hit["velocity"], hit["pressure"], hit["boundary_traces"], quad_extra)
            return build_phi_basis(psi)
    psi = build_psi_family(layout, space, quad_extra)
    phi = build_phi_basis(psi)
    if cache_dir is not None:
        cache.save(
            cache_dir,
            meta,
            {
                "velocity": psi.velocity,
                "pressure": psi.pressure,
                "boundary_traces": psi.boundary_traces,
                "coeffs": phi.coeffs,
            },
        )
    return phi


# --------------------------------------------------------------------------
# DoF interpolation


def dofs_of_function(u, layout, degree=20):
    """DoF values of a smooth vector field `u` (callable on (n, 2) points -> (n, 2)).

    Divergence moments use the divergence theorem, so no derivatives of u
    are needed.
    """
    poly = layout.polygon
    nd = layout.n_dof
    out = np.zeros(nd)
    vals = np.asarray(u(layout.node_points), dtype=float)
    for node in range(len(layout.node_points)):
        for c in range(2):
            out[layout.node_dof(node, c)] = vals[node, c]
    q = polygon_quadrature(poly, degree)
    uq = np.asarray(u(q.points), dtype=float)
    if layout.n_perp:
        out[layout.perp] = np.einsum("q,qc,qac->a", q.weights, uq, layout.perp_basis(q.points)) / poly.area
    m = layout.div_basis
    vol = np.einsum("q,qc,qgc->g", q.weights, uq, m.gradient(q.points))
    rule = edge_gauss_legendre((degree + 2) // 2)
    t = 0.5 * (rule.points + 1)
    bnd = np.zeros(m.dim)
    for e in range(poly.n_edges):
        x = poly.edge_point(e, t)
        w = 0.5 * rule.weights * poly.edge_lengths[e]
        un = np.asarray(u(x), dtype=float) @ poly.normals[e]
        bnd += np.einsum("q,q,qg->g", w, un, m(x))
    out[layout.div] = poly.diameter / poly.area * (bnd - vol)
    return out


@dataclass(eq=False)
class Interpolant:
    """u_I = q + sum_j dof_j(u - q) phi_j with q = Pi_nabla u_I (a polynomial).

    In exact arithmetic this equals sum_j dof_j(u) phi_j; splitting off the
    polynomial keeps the FEM error of the phi_j proportional to the small
    coefficients dof_j(u - q).
    """

    phi: PhiBasis
    poly_coeffs: np.ndarray  # [P_p]^2 full-basis coefficients of q
    weights: np.ndarray  # dof_j(u - q)

    def _poly_grad(self, pts):
        layout = self.phi.layout
        p = layout.p
        nm = n_monomials(p)
        c = layout.polygon.centroid
        h = layout.polygon.diameter
        mon = eval_monomials((pts - c) / h, p)
        d1, d2 = derivative_matrices(p)
        g = np.zeros(pts.shape[:-1] + (2, 2))
        for comp in range(2):
            cc = self.poly_coeffs[comp * nm : (comp + 1) * nm]
            g[..., comp, 0] = mon @ (d1 @ cc) / h
            g[..., comp, 1] = mon @ (d2 @ cc) / h
        return g

    def fem_velocity(self):
        return self.phi.velocity @ self.weights

    def _poly_values(self, pts):
        layout = self.phi.layout
        nm = n_monomials(layout.p)
        mon = eval_monomials((pts - layout.polygon.centroid) / layout.polygon.diameter, layout.p)
        return np.column_stack([mon @ self.poly_coeffs[:nm], mon @ self.poly_coeffs[nm:]])

    def as_fem_field(self):
        """P2 field: nodal interpolant of the polynomial part plus the FEM part."""
        space = self.phi.space
        qv = self._poly_values(space.node_points)
        vel = np.concatenate([qv[:, 0], qv[:, 1]]) + self.fem_velocity()
        return FemField(space, vel, np.zeros(space.n_pressure))

    def h1_error(self, grad_u, degree=8):
        """|u - u_I|_{1,K}; `grad_u` maps points (n, 2) -> (n, 2, 2) with [comp, direction]."""
        space = self.phi.space
        q = space.quadrature(degree)
        pts = q["points"].reshape(-1, 2)
        w = q["weights"].ravel()
        Ex, Ey = space._eval_operator(degree, "grads", weighted=False)
        v = self.fem_velocity()
        n = space.n_nodes
        gI = self._poly_grad(pts)
        gI[:, 0, 0] += Ex @ v[:n]
        gI[:, 0, 1] += Ey @ v[:n]
        gI[:, 1, 0] += Ex @ v[n:]
        gI[:, 1, 1] += Ey @ v[n:]
        diff = np.asarray(grad_u(pts), dtype=float) - gI
        return float(np.sqrt(np.einsum("q,qij,qij->", w, diff, diff)))


def interpolate(u, layout, phi, split=True, degree=20):
    """DoF interpolant of `u` built on the FEM realization of the canonical basis."""
    pack = projector_pack(layout)
    d = dofs_of_function(u, layout, degree)
    if split:
        q = pack.pi_nabla @ d
        w = d - pack.dofs_of_full @ q
    else:
        q = np.zeros(pack.pi_nabla.shape[0])
        w = d
    return Interpolant(phi, q, w)


@dataclass(frozen=True)
class RateReport:
    h: np.ndarray
    errors: np.ndarray
    slope: float
    r2: float
    local_slopes: np.ndarray


def fit_rate(h, errors):
    """Least-squares slope of log(error) against log(h), with R^2."""
    x, y = np.log(h), np.log(errors)
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    fit = A @ coef
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum((y - fit) ** 2) / ss if ss > 0 else 1.0
    return RateReport(np.asarray(h), np.asarray(errors), float(coef[0]), float(r2), np.diff(y) / np.diff(x))


def interpolation_rate_study(reference, u, grad_u, p, levels=5, size=0.2, anchor=(0.3, 0.3), refine=2, normalize=True):
    """Interpolation error on similar copies of `reference` shrinking by halves.

    Copy k is ``anchor + size * 2**-k * (reference - centroid)``. With
    `normalize` the seminorm is divided by |K|^(1/2), i.e. reported as an
    error density, which decays like h^p for smooth u; the raw local
    seminorm carries an extra factor h from the shrinking area.
    """
    from .vemspace import DofLayout

    ref = np.asarray(reference.vertices) - reference.centroid
    hs, errs = [], []
    for k in range(levels):
        poly = build_polygon(np.asarray(anchor) + size * 0.5**k * ref)
        layout = DofLayout(poly, p)
        phi = exact_basis(layout, refine=refine)
        e = interpolate(u, layout, phi).h1_error(grad_u)
        if normalize:
            e /= np.sqrt(poly.area)
        hs.append(poly.diameter)
        errs.append(e)
    return fit_rate(np.array(hs), np.array(errs))
