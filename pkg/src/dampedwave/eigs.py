"""Generalized eigenvalue helpers for (stiffness, lumped mass) pencils."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def smallest_generalized_eigenvalue(
    K: sp.spmatrix, mass: np.ndarray, tol: float = 1e-12, max_iter: int = 500
):
    """Smallest eigenvalue/eigenvector of K x = lam * diag(mass) x by inverse iteration.

    Deterministic start vector; converges when the relative Rayleigh-quotient
    change drops below tol.  Returns (eigenvalue, eigenvector, last_change).
    """
    n = K.shape[0]
    lu = spla.splu(K.tocsc())
    x = np.ones(n)
    x /= np.sqrt(np.sum(mass * x * x))
    lam_prev = None
    change = np.inf
    for _ in range(max_iter):
        y = lu.solve(mass * x)
        y /= np.sqrt(np.sum(mass * y * y))
        lam = float(y @ (K @ y)) / float(np.sum(mass * y * y))
        x = y
        if lam_prev is not None:
            change = abs(lam - lam_prev) / abs(lam)
            if change < tol:
                lam_prev = lam
                break
        lam_prev = lam
    return float(lam_prev), x, float(change)


def largest_generalized_eigenvalue(
    K: sp.spmatrix, mass: np.ndarray, tol: float = 1e-8, max_iter: int = 1000
) -> float:
    """Largest eigenvalue of diag(mass)^{-1} K by power iteration (CFL scale)."""
    n = K.shape[0]
    rng = np.random.default_rng(1234)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    lam_prev = 0.0
    for _ in range(max_iter):
        y = (K @ x) / mass
        lam = float(np.linalg.norm(y))
        if lam == 0.0:
            return 0.0
        x = y / lam
        if abs(lam - lam_prev) < tol * lam:
            break
        lam_prev = lam
    return lam
