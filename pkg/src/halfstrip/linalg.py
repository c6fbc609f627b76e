"""Dense numeric kernels shared across the package.

Matrices are float64 numpy arrays, small (d x d with d rarely above a few
dozen, a few hundred for truncated global solves). Probability row vectors
act on the left (``vec @ mat``); expected-step columns act on the right.
"""
from __future__ import annotations

import numpy as np

PIVOT_EPS = 1e-12
RADIUS_TOL = 1e-12
RADIUS_BUDGET = 10**6


class SingularMatrixError(ValueError):
    """Elimination met a pivot below the singularity threshold."""


class NotStochasticError(ValueError):
    """Rows are not probability distributions within tolerance."""


class ReducibleChainError(ValueError):
    """No unique stationary vector: more than one communicating class."""


class NoConvergenceError(RuntimeError):
    """Iteration budget exhausted; carries the best estimate found."""

    def __init__(self, message, estimate=None, iterations=0, residual=float("nan")):
        super().__init__(message)
        self.estimate = estimate
        self.iterations = iterations
        self.residual = residual


def invert(mat):
    """Inverse of a square matrix by Gauss-Jordan elimination with partial pivoting.

    Raises SingularMatrixError when the best available pivot falls below
    1e-12 in magnitude. Robustness over speed: blocks here are small.
    """
    a = np.asarray(mat, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    aug = np.hstack([a.astype(float, copy=True), np.eye(n)])
    for col in range(n):
        piv = col + int(np.argmax(np.abs(aug[col:, col])))
        if abs(aug[piv, col]) < PIVOT_EPS:
            raise SingularMatrixError(
                f"pivot {aug[piv, col]:.3e} below {PIVOT_EPS:g} at column {col}"
            )
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
        aug[col] /= aug[col, col]
        others = np.arange(n) != col
        aug[others] -= np.outer(aug[others, col], aug[col])
    return aug[:, n:]


def spectral_radius(mat, tol=RADIUS_TOL, max_iter=RADIUS_BUDGET):
    """Perron root of an entrywise nonnegative square matrix.

    Power iteration runs on ``mat + I`` so periodic support cannot make the
    iteration oscillate (the shift adds 1 to every eigenvalue and keeps the
    Perron vector), then 1 is subtracted from the converged Rayleigh
    quotient. Convergence is three successive Rayleigh quotients within
    ``tol`` of each other.

    Raises NoConvergenceError with the best estimate attached if the budget
    is exhausted.
    """
    a = np.asarray(mat, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise ValueError("entries must be nonnegative and finite")
    n = a.shape[0]
    if n == 1:
        return float(a[0, 0])
    b = a + np.eye(n)
    x = np.full(n, 1.0 / n)
    lam_prev = np.inf
    lam = 0.0
    streak = 0
    for _ in range(max_iter):
        y = b @ x
        lam = float(x @ y) / float(x @ x)
        x = y / y.sum()  # y.sum() >= x.sum() > 0 since diag(b) >= 1
        if abs(lam - lam_prev) <= tol:
            streak += 1
            if streak >= 3:
                return max(lam - 1.0, 0.0)
        else:
            streak = 0
        lam_prev = lam
    raise NoConvergenceError(
        "power iteration did not settle",
        estimate=max(lam - 1.0, 0.0),
        iterations=max_iter,
        residual=abs(lam - lam_prev),
    )


def stationary_left_vector(mat, row_tol=1e-9):
    """Unique stationary probability row vector pi with pi @ mat = pi.

    Solves (mat^T - I) x = 0 with the last equation replaced by the
    normalization sum(x) = 1, then validates the residual. A singular
    system, a negative solution, or a residual above 1e-10 all signal that
    the chain has no unique stationary vector.
    """
    s = np.asarray(mat, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {s.shape}")
    if not np.all(np.isfinite(s)) or np.any(s < -row_tol):
        raise NotStochasticError("entries must be nonnegative and finite")
    row_err = float(np.max(np.abs(s.sum(axis=1) - 1.0)))
    if row_err > row_tol:
        raise NotStochasticError(f"row sums deviate from 1 by {row_err:.3e}")
    n = s.shape[0]
    m = s.T - np.eye(n)
    m[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        pi = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError as exc:
        raise ReducibleChainError("stationary system is singular") from exc
    if not np.all(np.isfinite(pi)) or float(pi.min()) < -1e-9:
        raise ReducibleChainError("stationary solve produced an invalid vector")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    residual = float(np.abs(pi @ s - pi).sum())
    if residual > 1e-10 * max(1.0, float(np.abs(pi).sum())):
        raise ReducibleChainError(f"stationary residual {residual:.3e} too large")
    return pi
