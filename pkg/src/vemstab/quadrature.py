"""Quadrature rules on the reference edge and the reference triangle.

The reference edge is [-1, 1]; the reference triangle has vertices
(0, 0), (1, 0), (0, 1) and area 1/2.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy.special import roots_jacobi

from .errors import InvalidArgument


@dataclass(frozen=True)
class QuadRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self):
        return len(self.weights)


def _frozen(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def edge_gauss_legendre(order):
    """Gauss-Legendre rule with `order` points on [-1, 1], exact to 2*order - 1."""
    if order < 1:
        raise InvalidArgument("Gauss-Legendre order must be >= 1")
    x, w = legendre.leggauss(order)
    return QuadRule(_frozen(x), _frozen(w), 2 * order - 1)


@lru_cache(maxsize=None)
def edge_gauss_lobatto(p):
    """The p + 1 Gauss-Lobatto nodes on [-1, 1], endpoints included, ascending.

    Interior nodes are the roots of P'_p.
    """
    if p < 1:
        raise InvalidArgument("Gauss-Lobatto degree must be >= 1")
    if p == 1:
        return _frozen([-1.0, 1.0])
    interior = legendre.Legendre.basis(p).deriv().roots()
    interior = np.sort(np.real(interior))
    # symmetrize to kill root-finder noise
    interior = 0.5 * (interior - interior[::-1])
    return _frozen(np.concatenate(([-1.0], interior, [1.0])))


@lru_cache(maxsize=None)
def gauss_lobatto_weights(p):
    nodes = edge_gauss_lobatto(p)
    pn = legendre.legval(nodes, [0] * p + [1])
    return _frozen(2.0 / (p * (p + 1) * pn**2))


_MIDPOINT_RULE = QuadRule(
    _frozen([[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]]),
    _frozen([1 / 6, 1 / 6, 1 / 6]),
    2,
)


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Rule on the reference triangle exact for polynomials of total degree `degree`.

    Degrees 0-2 use symmetric rules; higher degrees use a collapsed
    (Duffy) tensor product of Gauss-Jacobi and Gauss-Legendre rules.
    """
    if degree < 0:
        raise InvalidArgument("degree must be >= 0")
    if degree <= 1:
        return QuadRule(_frozen([[1 / 3, 1 / 3]]), _frozen([0.5]), 1)
    if degree == 2:
        return _MIDPOINT_RULE
    n = (degree + 2) // 2
    # u direction absorbs the Jacobian (1 - u) via Jacobi weight (1 - t)^1
    tu, wu = roots_jacobi(n, 1.0, 0.0)
    tv, wv = legendre.leggauss(n)
    u = 0.5 * (tu + 1.0)
    v = 0.5 * (tv + 1.0)
    wu = wu / 4.0
    wv = wv / 2.0
    U, V = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    wts = np.outer(wu, wv).ravel()
    return QuadRule(_frozen(pts), _frozen(wts), 2 * n - 1)


def map_to_triangles(rule, tri_vertices):
    """Push a reference rule onto physical triangles.

    `tri_vertices` has shape (m, 3, 2). Returns points (m, q, 2) and
    weights (m, q) including the Jacobian.
    """
    a = tri_vertices[:, 0, :]
    e1 = tri_vertices[:, 1, :] - a
    e2 = tri_vertices[:, 2, :] - a
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    xi, eta = rule.points[:, 0], rule.points[:, 1]
    pts = a[:, None, :] + xi[None, :, None] * e1[:, None, :] + eta[None, :, None] * e2[:, None, :]
    wts = np.abs(det)[:, None] * rule.weights[None, :]
    return pts, wts
