"""Scaled monomial bases on a polygon and exact polynomial quadrature.

Every polynomial is stored as a coefficient vector over the raw scaled
monomials ``xi^alpha`` with ``xi = (x - x_K) / h_K``, multi-indices in
graded-lex order: (0,0), (1,0), (0,1), (2,0), (1,1), (0,2), ...
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument
from .geometry import subtriangulate
from .quadrature import map_to_triangles, triangle_rule


def n_monomials(degree):
    return 0 if degree < 0 else (degree + 1) * (degree + 2) // 2


@lru_cache(maxsize=None)
def exponents(degree):
    out = [(d - j, j) for d in range(degree + 1) for j in range(d + 1)]
    a = np.array(out, dtype=np.int64).reshape(-1, 2)
    a.setflags(write=False)
    return a


def monomial_index(a, b):
    d = a + b
    return d * (d + 1) // 2 + b


def eval_monomials(xi, degree):
    """Raw monomials xi^alpha at points `xi` (..., 2) -> (..., n_monomials)."""
    xi = np.asarray(xi, dtype=float)
    e = exponents(degree)
    px = xi[..., 0:1] ** e[:, 0]
    py = xi[..., 1:2] ** e[:, 1]
    return px * py


@lru_cache(maxsize=None)
def derivative_matrices(degree):
    """Matrices mapping coefficients to those of d/dxi1 and d/dxi2 (same degree slot)."""
    n = n_monomials(degree)
    d1 = np.zeros((n, n))
    d2 = np.zeros((n, n))
    for k, (a, b) in enumerate(exponents(degree)):
        if a > 0:
            d1[monomial_index(a - 1, b), k] = a
        if b > 0:
            d2[monomial_index(a, b - 1), k] = b
    d1.setflags(write=False)
    d2.setflags(write=False)
    return d1, d2


@lru_cache(maxsize=None)
def multiply_matrices(degree):
    """Matrices mapping degree-`degree` coefficients to xi1 * p and xi2 * p (degree + 1)."""
    n, m = n_monomials(degree), n_monomials(degree + 1)
    x1 = np.zeros((m, n))
    x2 = np.zeros((m, n))
    for k, (a, b) in enumerate(exponents(degree)):
        x1[monomial_index(a + 1, b), k] = 1.0
        x2[monomial_index(a, b + 1), k] = 1.0
    return x1, x2


def embed(coeffs, degree):
    """Pad coefficient arrays (last axis) to the monomial count of `degree`."""
    coeffs = np.asarray(coeffs, dtype=float)
    n = n_monomials(degree)
    if coeffs.shape[-1] > n:
        if np.any(coeffs[..., n:] != 0):
            raise InvalidArgument("polynomial degree exceeds target degree")
        return coeffs[..., :n]
    pad = [(0, 0)] * (coeffs.ndim - 1) + [(0, n - coeffs.shape[-1])]
    return np.pad(coeffs, pad)


class PolygonQuadrature:
    """Exact quadrature for polynomials of a given degree on a polygon."""

    def __init__(self, polygon, degree, trimesh=None):
        mesh = trimesh if trimesh is not None else subtriangulate(polygon, 0)
        pts, wts = map_to_triangles(triangle_rule(degree), mesh.points[mesh.triangles])
        self.points = pts.reshape(-1, 2)
        self.weights = wts.ravel()
        self.degree = degree


_QUAD_CACHE = {}


def polygon_quadrature(polygon, degree):
    key = (polygon.key, degree)
    q = _QUAD_CACHE.get(key)
    if q is None:
        q = _QUAD_CACHE[key] = PolygonQuadrature(polygon, degree)
    return q


@dataclass(frozen=True, eq=False)
class ScalarBasis:
    """Scaled monomials of degree <= `degree` centered at x_K with scale h_K.

    With ``zero_mean`` the constant is dropped and every remaining member
    has its mean over K subtracted.
    """

    center: np.ndarray
    scale: float
    degree: int
    zero_mean: bool
    coeffs: np.ndarray  # (dim, n_monomials(degree))

    @property
    def dim(self):
        return len(self.coeffs)

    def xi(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.scale

    def __call__(self, x):
        return eval_monomials(self.xi(x), self.degree) @ self.coeffs.T

    def gradient(self, x):
        """Gradients in physical coordinates, shape (..., dim, 2)."""
        d1, d2 = derivative_matrices(self.degree)
        m = eval_monomials(self.xi(x), self.degree)
        g1 = m @ (self.coeffs @ d1.T).T
        g2 = m @ (self.coeffs @ d2.T).T
        return np.stack([g1, g2], axis=-1) / self.scale


def scalar_basis(polygon, degree, zero_mean=False):
    if degree < 0:
        raise InvalidArgument("degree must be >= 0")
    n = n_monomials(degree)
    coeffs = np.eye(n)
    if zero_mean:
        q = polygon_quadrature(polygon, degree)
        xi = (q.points - polygon.centroid) / polygon.diameter
        means = (q.weights @ eval_monomials(xi, degree)) / polygon.area
        coeffs = coeffs[1:].copy()
        coeffs[:, 0] = -means[1:]
    coeffs.setflags(write=False)
    return ScalarBasis(polygon.centroid, polygon.diameter, degree, zero_mean, coeffs)


@dataclass(frozen=True, eq=False)
class VectorBasis:
    """Vector polynomial basis stored as coefficients (dim, 2, n_monomials(degree)).

    kind is ``"full"`` ([P_l]^2, x-component members first), ``"perp"``
    (x_perp * P_{p-3}, with x_perp the scaled, recentered (x2, -x1)) or
    ``"grad"`` (gradients of the nonconstant scaled monomials of P_{p-1},
    in xi-derivatives).
    """

    kind: str
    scalar: ScalarBasis
    degree: int
    coeffs: np.ndarray

    @property
    def dim(self):
        return len(self.coeffs)

    @property
    def center(self):
        return self.scalar.center

    @property
    def scale(self):
        return self.scalar.scale

    def __call__(self, x):
        xi = (np.asarray(x, dtype=float) - self.center) / self.scale
        m = eval_monomials(xi, self.degree)
        return np.einsum("...k,nck->...nc", m, self.coeffs)

    def divergence_coeffs(self):
        """Coefficients (dim, n_monomials(degree)) of the physical divergence."""
        d1, d2 = derivative_matrices(self.degree)
        return (self.coeffs[:, 0, :] @ d1.T + self.coeffs[:, 1, :] @ d2.T) / self.scale


def vector_basis(polygon, kind, degree):
    """Vector basis of the given kind.

    For ``full`` `degree` is l; for ``perp`` it is p - 3 (the degree of the
    scalar factor); for ``grad`` it is p - 1.
    """
    if kind == "full":
        if degree < 0:
            raise InvalidArgument("degree must be >= 0")
        n = n_monomials(degree)
        c = np.zeros((2 * n, 2, n))
        c[:n, 0, :] = np.eye(n)
        c[n:, 1, :] = np.eye(n)
        sb = scalar_basis(polygon, degree)
        return VectorBasis(kind, sb, degree, _ro(c))
    if kind == "perp":
        sb = scalar_basis(polygon, max(degree, 0))
        if degree < 0:
            return VectorBasis(kind, sb, 1, _ro(np.zeros((0, 2, n_monomials(1)))))
        x1, x2 = multiply_matrices(degree)
        n = n_monomials(degree)
        c = np.zeros((n, 2, n_monomials(degree + 1)))
        # x_perp m = (xi2 m, -xi1 m)
        c[:, 0, :] = (x2 @ np.eye(n)).T
        c[:, 1, :] = -(x1 @ np.eye(n)).T
        return VectorBasis(kind, sb, degree + 1, _ro(c))
    if kind == "grad":
        sb = scalar_basis(polygon, max(degree, 0))
        if degree < 1:
            return VectorBasis(kind, sb, 0, _ro(np.zeros((0, 2, 1))))
        d1, d2 = derivative_matrices(degree)
        n = n_monomials(degree)
        c = np.zeros((n - 1, 2, n))
        c[:, 0, :] = d1[:, 1:].T
        c[:, 1, :] = d2[:, 1:].T
        return VectorBasis(kind, sb, degree - 1, _ro(embed(c, degree - 1)))
    raise InvalidArgument(f"unknown vector basis kind {kind!r}")


def _ro(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def _basis_degree(b):
    return b.degree


def mass_matrix(basis_a, basis_b, polygon, trimesh=None):
    """Gram matrix M_ij = int_K a_i . b_j, exact for polynomial bases."""
    deg = _basis_degree(basis_a) + _basis_degree(basis_b)
    if trimesh is None:
        q = polygon_quadrature(polygon, deg)
    else:
        q = PolygonQuadrature(polygon, deg, trimesh)
    va = basis_a(q.points)
    vb = basis_b(q.points)
    if va.ndim == 2:
        return np.einsum("q,qi,qj->ij", q.weights, va, vb)
    return np.einsum("q,qic,qjc->ij", q.weights, va, vb)
