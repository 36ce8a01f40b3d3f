"""Dense Cholesky factorization and the solves built on it."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NotPositiveDefinite

PIVOT_TOL = 1e-12
SYMMETRY_TOL = 1e-12


def cholesky(V, tol: float = PIVOT_TOL, semidefinite: bool = False) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == V``.

    A pivot at or below ``tol * max(diag(V))`` is rejected. With
    ``semidefinite=True`` pivots within ``±tol * max(diag)`` are accepted as
    exact zeros (their column is zeroed), which lets the same routine certify
    positive semi-definiteness of correlation matrices.
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[0] != V.shape[1]:
        raise NotPositiveDefinite(f"expected a square matrix, got shape {V.shape}")
    n = V.shape[0]
    scale = float(np.max(np.abs(np.diag(V)))) if n else 0.0
    if not np.allclose(V, V.T, rtol=SYMMETRY_TOL, atol=SYMMETRY_TOL * max(scale, 1e-300)):
        raise NotPositiveDefinite("matrix is not symmetric")
    if n and scale == 0.0 and not semidefinite:
        raise NotPositiveDefinite("matrix has a zero diagonal")
    threshold = tol * scale
    L = np.zeros_like(V)
    for j in range(n):
        row = L[j, :j]
        pivot = V[j, j] - row @ row
        rest = V[j + 1:, j] - L[j + 1:, :j] @ row
        if pivot <= threshold:
            if semidefinite and pivot >= -threshold and np.all(np.abs(rest) <= 1e-9 * max(scale, 1.0)):
                continue
            raise NotPositiveDefinite(f"pivot {j} is {pivot:.6g} (threshold {threshold:.3g})")
        d = np.sqrt(pivot)
        L[j, j] = d
        L[j + 1:, j] = rest / d
    return L


def is_psd(V, tol: float = PIVOT_TOL) -> bool:
    try:
        cholesky(V, tol=tol, semidefinite=True)
    except NotPositiveDefinite:
        return False
    return True


def solve_lower(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    return solve_triangular(L, b, lower=True, check_finite=False)


def cho_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``(L L^T) x = b``."""
    y = solve_lower(L, b)
    return solve_triangular(L.T, y, lower=False, check_finite=False)


def quadratic_form(L: np.ndarray, d: np.ndarray) -> float:
    """``d^T (L L^T)^{-1} d`` through one forward substitution."""
    z = solve_lower(L, np.asarray(d, dtype=np.float64))
    return float(z @ z)
