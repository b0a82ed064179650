"""Computable side of the local Stokes-like virtual element space.

DoF ordering: vertex values (vertex-major, x then y), internal
Gauss-Lobatto edge values (edge, node, component), moments against the
x_perp P_{p-3} basis, scaled divergence moments against the zero-mean
P_{p-1} basis.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .errors import AssemblyError, ConditioningError, DecompositionError, InvalidArgument
from .polynomials import (
    derivative_matrices,
    embed,
    eval_monomials,
    mass_matrix,
    n_monomials,
    polygon_quadrature,
    scalar_basis,
    vector_basis,
)
from .quadrature import edge_gauss_legendre, edge_gauss_lobatto

STAB_KINDS = ("projection", "dofi")
BOUNDARY_TERMS = ("integral", "dofsum")


def lagrange_matrix(nodes, t):
    """Values L_k(t_i) of the Lagrange basis on `nodes`, shape (len(t), len(nodes))."""
    nodes = np.asarray(nodes, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.ones((len(t), len(nodes)))
    for k, xk in enumerate(nodes):
        for j, xj in enumerate(nodes):
            if j != k:
                out[:, k] *= (t - xj) / (xk - xj)
    return out


class DofLayout:
    """DoF functionals of the local space for a polygon and degree p >= 2."""

    def __init__(self, polygon, p):
        if p < 2:
            raise InvalidArgument("degree of accuracy p must be >= 2")
        self.polygon = polygon
        self.p = p
        self.n_edges = polygon.n_edges
        self.n_boundary = 2 * p * self.n_edges
        self.n_perp = (p - 2) * (p - 1) // 2
        self.n_div = p * (p + 1) // 2 - 1
        self.n_dof = self.n_boundary + self.n_perp + self.n_div
        self.boundary = slice(0, self.n_boundary)
        self.perp = slice(self.n_boundary, self.n_boundary + self.n_perp)
        self.div = slice(self.n_boundary + self.n_perp, self.n_dof)
        self.perp_basis = vector_basis(polygon, "perp", p - 3)
        self.div_basis = scalar_basis(polygon, p - 1, zero_mean=True)

    @cached_property
    def gl_nodes(self):
        """Gauss-Lobatto nodes mapped to [0, 1]."""
        return 0.5 * (edge_gauss_lobatto(self.p) + 1.0)

    @cached_property
    def edge_node_ids(self):
        """Boundary node ids along each edge, from its first to its last vertex."""
        n, p = self.n_edges, self.p
        ids = np.empty((n, p + 1), dtype=np.int64)
        for e in range(n):
            ids[e, 0] = e
            ids[e, 1:p] = n + e * (p - 1) + np.arange(p - 1)
            ids[e, p] = (e + 1) % n
        return ids

    @cached_property
    def node_points(self):
        poly = self.polygon
        pts = [poly.vertices]
        for e in range(self.n_edges):
            pts.append(poly.edge_point(e, self.gl_nodes[1:-1]))
        return np.vstack(pts)

    def node_dof(self, node, comp):
        return 2 * node + comp

    def trace_matrix(self, e, t):
        """Map DoF vectors to boundary values on edge e at parameters t in [0, 1].

        Returns an array (len(t), 2, n_dof).
        """
        lag = lagrange_matrix(self.gl_nodes, t)
        out = np.zeros((lag.shape[0], 2, self.n_dof))
        for k, node in enumerate(self.edge_node_ids[e]):
            for c in range(2):
                out[:, c, self.node_dof(node, c)] = lag[:, k]
        return out

    def boundary_dof_mask(self):
        mask = np.zeros(self.n_dof, dtype=bool)
        mask[self.boundary] = True
        return mask

    def describe(self):
        return {
            "p": self.p,
            "n_edges": self.n_edges,
            "n_dof": self.n_dof,
            "blocks": {"boundary": self.n_boundary, "perp": self.n_perp, "div": self.n_div},
            "ordering": "vertex(x,y) | edge GL node(x,y) | perp moments | div moments",
        }


class EdgeQuadrature:
    """Gauss-Legendre points on every edge with trace matrices."""

    def __init__(self, layout, order=None):
        poly = layout.polygon
        order = order or layout.p + 2
        rule = edge_gauss_legendre(order)
        t = 0.5 * (rule.points + 1.0)
        self.points = []
        self.weights = []
        self.normals = []
        self.traces = []
        for e in range(poly.n_edges):
            self.points.append(poly.edge_point(e, t))
            self.weights.append(0.5 * rule.weights * poly.edge_lengths[e])
            self.normals.append(np.broadcast_to(poly.normals[e], (len(t), 2)))
            self.traces.append(layout.trace_matrix(e, t))
        self.points = np.vstack(self.points)
        self.weights = np.concatenate(self.weights)
        self.normals = np.vstack(self.normals)
        self.traces = np.concatenate(self.traces)  # (nq, 2, n_dof)

    @cached_property
    def normal_traces(self):
        return np.einsum("qc,qcj->qj", self.normals, self.traces)


@dataclass(frozen=True, eq=False)
class ProjectorPack:
    """Dense DoF-to-polynomial maps for one layout.

    pi_nabla:   DoF -> [P_p]^2 coefficients (full basis, x-members first)
    pi_perp:    DoF -> x_perp P_{p-3} coefficients (perp basis)
    div:        DoF -> raw scaled-monomial coefficients of div v in P_{p-1}
    pi0_pm2:    DoF -> [P_{p-2}]^2 coefficients of the L2 projection
    moments_pm2: DoF -> moments int_K v . w_k over the [P_{p-2}]^2 full basis
    dofs_of_full: [P_p]^2 coefficients -> DoF values
    """

    layout: DofLayout
    pi_nabla: np.ndarray
    pi_perp: np.ndarray
    div: np.ndarray
    pi0_pm2: np.ndarray
    moments_pm2: np.ndarray
    dofs_of_full: np.ndarray
    stiffness_full: np.ndarray
    mass_perp: np.ndarray
    mass_div_raw: np.ndarray
    boundary_mass: np.ndarray
    flux: np.ndarray


def _solve_gram(gram, rhs, what):
    """Solve with row and column equilibration.

    Scaled monomials on flat elements differ in size by powers of the
    aspect ratio; the scaling removes that part of the condition number.
    """
    if not gram.size:
        return np.linalg.solve(gram, rhs)
    col = 1.0 / np.maximum(np.abs(gram).max(axis=0), 1e-300)
    row = 1.0 / np.maximum(np.abs(gram * col).max(axis=1), 1e-300)
    scaled = row[:, None] * gram * col
    cond = np.linalg.cond(scaled)
    if not np.isfinite(cond) or cond > 1e15:
        raise ConditioningError(f"singular {what} Gram matrix (cond={cond:.3e})", cond)
    return col[:, None] * np.linalg.solve(scaled, row[:, None] * rhs)


def dofs_of_polynomial(q, layout, pack=None):
    """DoF values of the [P_p]^2 polynomial with full-basis coefficients `q`."""
    pack = pack or projector_pack(layout)
    return pack.dofs_of_full @ np.asarray(q, dtype=float)


def polynomial_coeffs(layout, func_x=None, func_y=None):
    """Full-basis coefficients from per-component raw coefficient lists."""
    n = n_monomials(layout.p)
    out = np.zeros(2 * n)
    if func_x is not None:
        out[:n] = embed(func_x, layout.p)
    if func_y is not None:
        out[n:] = embed(func_y, layout.p)
    return out


def constant_dofs(layout, pack=None):
    """DoF vectors (n_dof, 2) of the constant fields (1, 0) and (0, 1)."""
    n = n_monomials(layout.p)
    qs = np.zeros((2 * n, 2))
    qs[0, 0] = 1.0
    qs[n, 1] = 1.0
    return dofs_of_polynomial(qs, layout, pack)


def _dofs_of_full_matrix(layout, full):
    poly = layout.polygon
    p, nd = layout.p, layout.n_dof
    nf = full.dim
    D = np.zeros((nd, nf))
    vals = full(layout.node_points)  # (nodes, nf, 2)
    for node in range(len(layout.node_points)):
        for c in range(2):
            D[layout.node_dof(node, c)] = vals[node, :, c]
    if layout.n_perp:
        D[layout.perp] = mass_matrix(layout.perp_basis, full, poly) / poly.area
    m = layout.div_basis
    q = polygon_quadrature(poly, 2 * p)
    div_raw = full.divergence_coeffs()  # (nf, n_mon(p))
    divvals = eval_monomials(m.xi(q.points), p) @ div_raw.T
    mvals = m(q.points)
    D[layout.div] = poly.diameter / poly.area * np.einsum("q,qi,qj->ij", q.weights, mvals, divvals)
    return D


def projector_pack(layout):
    """Assemble Pi_nabla, Pi0_perp, Pi0_{p-2} and the divergence map."""
    cached = getattr(layout, "_pack", None)
    if cached is not None:
        return cached
    poly = layout.polygon
    p, nd = layout.p, layout.n_dof
    h, area = poly.diameter, poly.area
    eq = EdgeQuadrature(layout)

    full = vector_basis(poly, "full", p)
    D = _dofs_of_full_matrix(layout, full)

    # divergence: mean from the boundary flux, zero-mean part from Dv4
    flux = eq.weights @ eq.normal_traces  # (nd,)
    m = layout.div_basis
    Mdiv = mass_matrix(m, m, poly)
    dcoef = _solve_gram(Mdiv, np.eye(nd)[layout.div], "divergence") * (area / h)
    ndm = n_monomials(p - 1)
    Div = np.zeros((ndm, nd))
    Div[0] = flux / area
    Div += embed(m.coeffs, p - 1).T @ dcoef

    raw_pm1 = scalar_basis(poly, p - 1)
    Mraw = mass_matrix(raw_pm1, raw_pm1, poly)

    # moments of v against raw monomials' gradients: int v.grad a = -int div v a + int_dK (v.n) a
    avals = raw_pm1(eq.points)  # (nq, ndm)
    bnd_a = np.einsum("q,qa,qj->aj", eq.weights, avals, eq.normal_traces)
    grad_moments = -Mraw @ Div + bnd_a  # rows: raw monomials (xi-power basis) of P_{p-1}
    # x_perp moments from Dv3
    Sel3 = np.eye(nd)[layout.perp]
    perp_moments = area * Sel3

    # decompose the [P_{p-2}]^2 full basis as grad a + x_perp b
    nk = n_monomials(p - 2)
    d1, d2 = derivative_matrices(p - 1)
    cols = []
    for a in range(1, ndm):
        gx = embed(d1[:, a] / h, p - 2)
        gy = embed(d2[:, a] / h, p - 2)
        cols.append(np.concatenate([gx, gy]))
    perp = layout.perp_basis
    for b in range(layout.n_perp):
        cols.append(np.concatenate([embed(perp.coeffs[b, 0], p - 2), embed(perp.coeffs[b, 1], p - 2)]))
    Mdec = np.array(cols).T
    if Mdec.shape[0] != Mdec.shape[1] or np.linalg.matrix_rank(Mdec) < Mdec.shape[0]:
        raise DecompositionError("grad + perp splitting of [P_{p-2}]^2 is rank deficient")
    X = np.linalg.solve(Mdec, np.eye(2 * nk))  # columns: decomposition of each basis member
    Xa, Xb = X[: ndm - 1], X[ndm - 1 :]
    moments = Xa.T @ grad_moments[1:] + Xb.T @ perp_moments

    full_pm2 = vector_basis(poly, "full", p - 2)
    M_pm2 = mass_matrix(full_pm2, full_pm2, poly)
    pi0 = _solve_gram(M_pm2, moments, "[P_{p-2}]^2")

    # H1 projector
    nf = full.dim
    nm = n_monomials(p)
    qq = polygon_quadrature(poly, 2 * p)
    xi = full.scalar.xi(qq.points)
    mon = eval_monomials(xi, p)
    dd1, dd2 = derivative_matrices(p)
    gx = mon @ dd1 / h  # d/dx of each raw monomial, (nq, nm)
    gy = mon @ dd2 / h
    Gs = np.einsum("q,qi,qj->ij", qq.weights, gx, gx) + np.einsum("q,qi,qj->ij", qq.weights, gy, gy)
    G = np.zeros((nf, nf))
    G[:nm, :nm] = Gs
    G[nm:, nm:] = Gs
    lap = (dd1 @ dd1 + dd2 @ dd2) / h**2  # raw degree p -> raw (same slot)
    rhs = np.zeros((nf, nd))
    xi_b = full.scalar.xi(eq.points)
    mon_b = eval_monomials(xi_b, p)
    dn = (mon_b @ dd1 * eq.normals[:, :1] + mon_b @ dd2 * eq.normals[:, 1:]) / h  # (nq, nm)
    for c in range(2):
        lap_c = embed(lap.T, p - 2)  # (nm, nk): Laplacian of each raw monomial
        mom_c = moments[c * nk : (c + 1) * nk]
        rhs[c * nm : (c + 1) * nm] = -lap_c @ mom_c + np.einsum(
            "q,qi,qj->ij", eq.weights, dn, eq.traces[:, c, :]
        )
    Gmod = G.copy()
    bvals = eval_monomials(xi_b, p)
    for c in range(2):
        r = c * nm
        Gmod[r] = 0.0
        Gmod[r, c * nm : (c + 1) * nm] = eq.weights @ bvals
        rhs[r] = eq.weights @ eq.traces[:, c, :]
    pi_nabla = _solve_gram(Gmod, rhs, "H1 projector")

    Mperp = mass_matrix(perp, perp, poly) if layout.n_perp else np.zeros((0, 0))
    pi_perp = _solve_gram(Mperp, perp_moments, "perp") if layout.n_perp else np.zeros((0, nd))

    Bmass = np.einsum("q,qcj,qck->jk", eq.weights, eq.traces, eq.traces)

    pack = ProjectorPack(
        layout=layout,
        pi_nabla=pi_nabla,
        pi_perp=pi_perp,
        div=Div,
        pi0_pm2=pi0,
        moments_pm2=moments,
        dofs_of_full=D,
        stiffness_full=G,
        mass_perp=Mperp,
        mass_div_raw=Mraw,
        boundary_mass=Bmass,
        flux=flux,
    )
    layout._pack = pack
    return pack


def reproduction_error(layout, pack=None):
    """max |Pi_nabla(dofs(q)) - q| over the [P_p]^2 basis, in coefficients of
    members normalized to unit mean square on K.

    Raw scaled-monomial coefficients of y^k on an element of aspect ratio r
    carry a factor r^k; the normalization removes it.
    """
    pack = pack or projector_pack(layout)
    poly = layout.polygon
    full = vector_basis(poly, "full", layout.p)
    nrm = np.sqrt(np.diag(mass_matrix(full, full, poly)) / poly.area)
    E = pack.pi_nabla @ pack.dofs_of_full - np.eye(len(nrm))
    return float(np.abs(nrm[:, None] * E / nrm[None, :]).max())


def divergence_from_dofs(v, layout, pack=None):
    """Raw scaled-monomial coefficients of div v (degree p - 1)."""
    pack = pack or projector_pack(layout)
    return pack.div @ np.asarray(v, dtype=float)


def interior_moments_pminus2(v, layout, pack=None):
    """Moments int_K v . w over the [P_{p-2}]^2 full basis (x-members first)."""
    pack = pack or projector_pack(layout)
    return pack.moments_pm2 @ np.asarray(v, dtype=float)


def _stab_raw(layout, pack, kind, boundary_term):
    h = layout.polygon.diameter
    if kind == "dofi":
        return np.eye(layout.n_dof)
    if kind != "projection":
        raise InvalidArgument(f"unknown stabilization {kind!r}")
    S = pack.pi_perp.T @ pack.mass_perp @ pack.pi_perp / h**2
    S = S + pack.div.T @ pack.mass_div_raw @ pack.div
    if boundary_term == "integral":
        S = S + pack.boundary_mass / h
    elif boundary_term == "dofsum":
        S = S + np.diag(layout.boundary_dof_mask().astype(float))
    else:
        raise InvalidArgument(f"unknown boundary term {boundary_term!r}")
    return S


def stab_projection_matrix(layout, pack=None, boundary_term="integral", raw=False):
    """Projection-based stabilization, composed with (I - Pi_nabla) unless `raw`."""
    pack = pack or projector_pack(layout)
    S = _stab_raw(layout, pack, "projection", boundary_term)
    if raw:
        return S
    R = np.eye(layout.n_dof) - pack.dofs_of_full @ pack.pi_nabla
    return R.T @ S @ R


def stab_dofi_matrix(layout, pack=None, raw=False):
    """Euclidean DoF product, composed with (I - Pi_nabla) unless `raw`."""
    pack = pack or projector_pack(layout)
    if raw:
        return np.eye(layout.n_dof)
    R = np.eye(layout.n_dof) - pack.dofs_of_full @ pack.pi_nabla
    return R.T @ R


def consistency_matrix(layout, pack=None):
    pack = pack or projector_pack(layout)
    return pack.pi_nabla.T @ pack.stiffness_full @ pack.pi_nabla


def discrete_form_A(layout, pack=None, stab_kind="projection", boundary_term="integral"):
    """Local matrix A_ij = a_h(phi_j, phi_i) over the canonical basis."""
    pack = pack or projector_pack(layout)
    if stab_kind == "projection":
        S = stab_projection_matrix(layout, pack, boundary_term)
    elif stab_kind == "dofi":
        S = stab_dofi_matrix(layout, pack)
    else:
        raise InvalidArgument(f"unknown stabilization {stab_kind!r}")
    A = consistency_matrix(layout, pack) + S
    asym = np.abs(A - A.T).max()
    if asym > 1e-10 * max(np.abs(A).max(), 1.0):
        raise AssemblyError(f"discrete form not symmetric (max asymmetry {asym:.3e})")
    return 0.5 * (A + A.T)


def boundary_equivalence_interval(layout, pack=None):
    """Generalized eigenvalue range of (h^-1 boundary mass, boundary DoF sum)."""
    pack = pack or projector_pack(layout)
    b = layout.boundary
    Mb = pack.boundary_mass[b, b] / layout.polygon.diameter
    w = sla.eigvalsh(Mb, np.eye(Mb.shape[0]))
    return float(w.min()), float(w.max())


def dump_matrix(path, matrix, layout, fmt="csv"):
    """Write a matrix as CSV, or raw row-major float64 with a JSON sidecar."""
    import json
    from pathlib import Path

    path = Path(path)
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    if fmt == "csv":
        np.savetxt(path, matrix, delimiter=",", fmt="%.17g")
    elif fmt == "bin":
        path.write_bytes(matrix.tobytes())
    else:
        raise InvalidArgument(f"unknown matrix format {fmt!r}")
    sidecar = {
        "shape": list(matrix.shape),
        "dtype": "float64",
        "order": "row-major",
        "format": fmt,
        "element_hash": layout.polygon.key,
        "layout": layout.describe(),
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))
    return path


def load_matrix(path):
    import json
    from pathlib import Path

    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    if meta["format"] == "csv":
        return np.loadtxt(path, delimiter=",", ndmin=2)
    return np.frombuffer(path.read_bytes(), dtype=np.float64).reshape(meta["shape"]).copy()
