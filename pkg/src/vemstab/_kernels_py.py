"""Numpy implementation of the Taylor-Hood element kernels.

Used when the compiled extension is unavailable, and as the reference the
compiled kernels are tested against.
"""

import numpy as np

# edge midpoints of the reference triangle; exact for quadratics
_QP = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])  # barycentric


def p2_values(lam):
    """P2 shape functions at barycentric points (..., 3) -> (..., 6).

    Order: vertices 0, 1, 2, then midpoints of edges (1,2), (2,0), (0,1).
    """
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack(
        [
            l0 * (2 * l0 - 1),
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            4 * l1 * l2,
            4 * l2 * l0,
            4 * l0 * l1,
        ],
        axis=-1,
    )


def p2_dlam(lam):
    """Derivatives of P2 shape functions w.r.t. barycentrics: (..., 6, 3)."""
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    z = np.zeros_like(l0)
    rows = [
        [4 * l0 - 1, z, z],
        [z, 4 * l1 - 1, z],
        [z, z, 4 * l2 - 1],
        [z, 4 * l2, 4 * l1],
        [4 * l2, z, 4 * l0],
        [4 * l1, 4 * l0, z],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def barycentric_gradients(points, triangles):
    """Gradients of barycentric coordinates (m, 3, 2) and signed areas (m,)."""
    p = points[triangles]
    x0, x1, x2 = p[:, 0], p[:, 1], p[:, 2]
    det = (x1[:, 0] - x0[:, 0]) * (x2[:, 1] - x0[:, 1]) - (x2[:, 0] - x0[:, 0]) * (x1[:, 1] - x0[:, 1])
    g = np.empty((len(triangles), 3, 2))
    g[:, 0, 0] = x1[:, 1] - x2[:, 1]
    g[:, 0, 1] = x2[:, 0] - x1[:, 0]
    g[:, 1, 0] = x2[:, 1] - x0[:, 1]
    g[:, 1, 1] = x0[:, 0] - x2[:, 0]
    g[:, 2, 0] = x0[:, 1] - x1[:, 1]
    g[:, 2, 1] = x1[:, 0] - x0[:, 0]
    g /= det[:, None, None]
    return g, 0.5 * det


def element_matrices(points, triangles):
    """Scalar P2 stiffness (m, 6, 6) and P1-P2 divergence coupling (m, 3, 6, 2).

    ``div[t, k, i, c] = int_T lambda_k d_c phi_i``.
    """
    glam, area = barycentric_gradients(points, triangles)
    dl = p2_dlam(_QP)  # (3qp, 6, 3)
    grads = np.einsum("qik,tkc->tqic", dl, glam)  # (m, 3qp, 6, 2)
    w = area / 3.0
    stiff = np.einsum("t,tqic,tqjc->tij", w, grads, grads)
    div = np.einsum("t,qk,tqic->tkic", w, _QP, grads)
    return stiff, div
