"""Small dense linear-algebra helpers shared across the package."""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Raised when a matrix has an unusable shape."""


def _as_matrix(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {M.shape}")
    return M


def projector(n: int) -> np.ndarray:
    """Return the averaging projector ``(1/n) 1 1^T``."""
    return np.full((n, n), 1.0 / n)


def nullspace_basis(M, tol: float = 1e-9) -> np.ndarray:
    """
    Orthonormal basis for the numerical nullspace of `M`.

    Singular values below ``tol * ||M||`` are treated as zero. The returned
    matrix has one column per null direction; it has zero columns when `M`
    has full column rank.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    M = _as_matrix(M)
    if M.size == 0:
        raise DimensionError("nullspace of an empty matrix is undefined")
    _, s, Vt = np.linalg.svd(M, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > tol * smax)) if smax > 0 else 0
    return Vt[rank:].T.copy()


def spectral_norm(M) -> float:
    M = _as_matrix(M)
    if M.size == 0:
        raise DimensionError("spectral norm of an empty matrix is undefined")
    return float(np.linalg.norm(M, 2))


def kron(A, B) -> np.ndarray:
    return np.kron(_as_matrix(A), _as_matrix(B))


def max_eigenvalue_symmetric(S) -> float:
    """Largest eigenvalue of a (numerically) symmetric matrix."""
    S = _as_matrix(S)
    if S.shape[0] != S.shape[1]:
        raise DimensionError(f"matrix must be square, got {S.shape}")
    scale = max(np.abs(S).max(initial=0.0), 1.0)
    if np.abs(S - S.T).max(initial=0.0) > 1e-9 * scale:
        raise ValueError("matrix is not symmetric")
    return float(np.linalg.eigvalsh(0.5 * (S + S.T))[-1])


def min_eigenvalue_symmetric(S) -> float:
    return -max_eigenvalue_symmetric(-_as_matrix(S))


def symmetric_basis(k: int) -> list[np.ndarray]:
    """Basis of the k x k symmetric matrices (upper-triangle ordering)."""
    basis = []
    for i in range(k):
        for j in range(i, k):
            E = np.zeros((k, k))
            E[i, j] = E[j, i] = 1.0
            basis.append(E)
    return basis


def symmetric_from_vector(theta, k: int) -> np.ndarray:
    S = np.zeros((k, k))
    idx = 0
    for i in range(k):
        for j in range(i, k):
            S[i, j] = S[j, i] = theta[idx]
            idx += 1
    return S
