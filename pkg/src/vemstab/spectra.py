"""Deflated symmetric generalized eigenproblems A v = lambda B v."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DeflationError, InvalidArgument

# smallest/largest eigenvalue ratio below which a deflated matrix counts as singular
NEAR_SINGULAR = 1e-14


@dataclass(frozen=True)
class SpectralResult:
    lambda_min: float
    lambda_max: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # in the original (undeflated) coordinates
    deflation_basis: np.ndarray
    residual: float


def complement_basis(kernel, n):
    """Orthonormal basis of the orthogonal complement of span(kernel) in R^n."""
    if kernel is None or np.size(kernel) == 0:
        return np.eye(n)
    K = np.asarray(kernel, dtype=float).reshape(n, -1)
    return sla.null_space(K.T)


def _symmetric(M, name):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidArgument(f"{name} must be square")
    scale = max(np.abs(M).max(), 1e-300)
    if np.abs(M - M.T).max() > 1e-8 * scale:
        raise InvalidArgument(f"{name} is not symmetric")
    return 0.5 * (M + M.T)


def deflated_gen_eig(A, B, kernel=None):
    """Extremal eigenvalues of the pencil (A, B) on the complement of `kernel`.

    The pencil is restricted to an orthonormal basis Z of the complement,
    then reduced to a standard symmetric problem with the Cholesky factor
    of Z^T B Z.
    """
    A = _symmetric(A, "A")
    B = _symmetric(B, "B")
    if A.shape != B.shape:
        raise InvalidArgument("A and B must have the same shape")
    n = A.shape[0]
    Z = complement_basis(kernel, n)
    Ab = Z.T @ A @ Z
    Bb = Z.T @ B @ Z
    Ab = 0.5 * (Ab + Ab.T)
    Bb = 0.5 * (Bb + Bb.T)
    wb = sla.eigvalsh(Bb)
    if wb[0] <= NEAR_SINGULAR * wb[-1]:
        raise DeflationError(
            f"deflated B is not positive definite (eigenvalue ratio {wb[0] / wb[-1]:.2e}); check the kernel or FEM resolution"
        )
    try:
        L = sla.cholesky(Bb, lower=True)
    except sla.LinAlgError as exc:
        raise DeflationError("deflated B is not positive definite; check the kernel or FEM resolution") from exc
    Y = sla.solve_triangular(L, Ab, lower=True)
    C = sla.solve_triangular(L, Y.T, lower=True)
    C = 0.5 * (C + C.T)
    lam, y = sla.eigh(C)
    if lam[0] <= 0:
        raise DeflationError(f"non-positive eigenvalue {lam[0]:.3e} on the deflated subspace")
    V = Z @ sla.solve_triangular(L.T, y, lower=False)
    R = A @ V - (B @ V) * lam
    res = float(np.max(np.linalg.norm(R, axis=0) / (np.linalg.norm(A, 2) * np.linalg.norm(V, axis=0))))
    return SpectralResult(float(lam[0]), float(lam[-1]), lam, V, Z, res)


def spectral_condition(M, kernel=None):
    """Ratio of the largest to the smallest eigenvalue of M restricted to the complement of `kernel`."""
    M = _symmetric(M, "M")
    Z = complement_basis(kernel, M.shape[0])
    w = sla.eigvalsh(Z.T @ M @ Z)
    if w[0] <= NEAR_SINGULAR * abs(w[-1]):
        raise DeflationError(f"matrix not positive definite on the deflated subspace (min eig {w[0]:.3e})")
    return float(w[-1] / w[0])
