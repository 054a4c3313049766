"""Leading singular pair and regularized least squares.

Only these two primitives are needed by the models, so they are written
directly on top of numpy array arithmetic rather than LAPACK wrappers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotConverged, SingularSystem, ZeroMatrix

ZERO_NORM = 1e-14
PIVOT_TOL = 1e-12


@dataclass(frozen=True)
class SingularPair:
    sigma: float
    left: np.ndarray
    right: np.ndarray
    iterations: int
    converged: bool


def sign_flip(left: np.ndarray, right: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flip both vectors so the largest-magnitude entry of ``left`` is positive.

    ``np.argmax`` returns the first maximum, which gives the lowest-index
    tie-break.
    """
    i = int(np.argmax(np.abs(left)))
    if left[i] < 0:
        return -left, -right
    return left, right


def leading_singular_pair(z, tol: float = 1e-10, max_iter: int = 1000) -> SingularPair:
    """Best rank-1 approximation ``z ~ sigma * left @ right.T`` by alternating power iteration.

    The iteration starts from the normalized column sums of squares of ``z``
    and alternates ``left <- z @ right``, ``right <- z.T @ left``.
    Convergence requires both a relative change in ``sigma`` below ``tol``
    and a change in the right vector below ``100 * tol``; sigma alone
    converges quadratically faster than the vectors.

    Raises
    ------
    ZeroMatrix
        If ``||z||_F < 1e-14``.
    NotConverged
        If ``max_iter`` is hit; ``exc.result`` carries the last iterate.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got shape {z.shape}")
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be > 0 and max_iter >= 1")
    if np.linalg.norm(z) < ZERO_NORM:
        raise ZeroMatrix("matrix is numerically zero")

    vec_tol = 100.0 * tol
    right = (z * z).sum(axis=0)
    left = z @ right
    if np.linalg.norm(left) < ZERO_NORM * np.linalg.norm(right):
        # start vector orthogonal to the row space; use the heaviest row instead
        right = z[int(np.argmax((z * z).sum(axis=1)))].copy()
        left = z @ right
    right = right / np.linalg.norm(right)

    sigma = 0.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        left = z @ right
        left /= np.linalg.norm(left)
        new_right = z.T @ left
        new_sigma = float(np.linalg.norm(new_right))
        new_right /= new_sigma
        d_sigma = abs(new_sigma - sigma)
        d_vec = float(np.linalg.norm(new_right - right))
        sigma, right = new_sigma, new_right
        if d_sigma < tol * sigma and d_vec < vec_tol:
            converged = True
            break

    # one final left update so left and right are mutually consistent
    left = z @ right
    left /= np.linalg.norm(left)
    left, right = sign_flip(left, right)
    pair = SingularPair(sigma, left, right, it, converged)
    if not converged:
        raise NotConverged(
            f"power iteration did not converge in {max_iter} iterations", result=pair
        )
    return pair


def cholesky_solve(m, b) -> np.ndarray:
    """Solve ``m x = b`` for symmetric positive definite ``m``.

    ``b`` may be a vector or a matrix of right-hand sides. Raises
    :class:`SingularSystem` when a pivot falls below ``1e-12`` times the
    largest diagonal entry.
    """
    m = np.asarray(m, dtype=float)
    b = np.asarray(b, dtype=float)
    p = m.shape[0]
    if m.shape != (p, p) or b.shape[0] != p:
        raise DimensionMismatch(f"cannot solve system {m.shape} with rhs {b.shape}")
    scale = float(np.max(np.abs(np.diag(m)))) if p else 0.0
    if not np.isfinite(scale) or scale <= 0.0:
        raise SingularSystem("system matrix has no positive diagonal")
    lower = np.zeros_like(m)
    for i in range(p):
        row = lower[i, :i]
        pivot = m[i, i] - row @ row
        if pivot <= PIVOT_TOL * scale:
            raise SingularSystem(f"relative pivot {pivot / scale:.3e} at index {i}")
        lower[i, i] = np.sqrt(pivot)
        if i + 1 < p:
            lower[i + 1 :, i] = (m[i + 1 :, i] - lower[i + 1 :, :i] @ row) / lower[i, i]

    # forward then back substitution
    w = np.zeros_like(b)
    for i in range(p):
        w[i] = (b[i] - lower[i, :i] @ w[:i]) / lower[i, i]
    x = np.zeros_like(b)
    for i in range(p - 1, -1, -1):
        x[i] = (w[i] - lower[i + 1 :, i] @ x[i + 1 :]) / lower[i, i]
    return x


def solve_ridge(a, y, lam: float = 0.0) -> np.ndarray:
    """``argmin_b ||a b - y||^2 + lam ||b||^2`` via the normal equations."""
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float)
    if a.ndim != 2 or y.shape != (a.shape[0],):
        raise DimensionMismatch(f"design {a.shape} incompatible with target {y.shape}")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    gram = a.T @ a
    gram[np.diag_indices_from(gram)] += lam
    return cholesky_solve(gram, a.T @ y)
