"""Dense-matrix kernels: SVD, nuclear norm, its subgradient, effective rank.

The SVD is a one-sided Jacobi iteration: columns of the input are rotated
pairwise until they are mutually orthogonal, at which point their norms are
the singular values. Jacobi is slow on large matrices but very accurate at
the small sizes used here, and the sweep loop compiles well with numba.
"""

from typing import NamedTuple

import numpy as np

from ._accel import njit
from .errors import ConvergenceError, ValidationError

MAX_SWEEPS = 100
OFF_DIAGONAL_TOL = 1e-12


class SvdResult(NamedTuple):
    """Thin SVD ``a = u @ diag(s) @ v.T`` with orthonormal u, v columns."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


def require_matrix(a, name="matrix"):
    """Validate and return `a` as a finite 2-D float64 array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"{name} must have at least one row and column")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


@njit(cache=True)
def _jacobi_sweeps(bt, vt, max_sweeps, tol):
    """Orthogonalize the rows of `bt` in place by pairwise Jacobi rotations.

    `bt` holds the input matrix transposed (one column per row, so each
    row slice is contiguous); `vt` accumulates the right rotations the
    same way. Returns (sweeps_used, converged).
    """
    m = bt.shape[0]
    for sweep in range(max_sweeps):
        off = 0.0
        trace = 0.0
        for p in range(m):
            trace += np.dot(bt[p], bt[p])
        for p in range(m - 1):
            for q in range(p + 1, m):
                app = np.dot(bt[p], bt[p])
                aqq = np.dot(bt[q], bt[q])
                apq = np.dot(bt[p], bt[q])
                off += 2.0 * apq * apq
                if apq * apq <= 1e-28 * app * aqq:
                    continue
                tau = (aqq - app) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for i in range(bt.shape[1]):
                    bp = bt[p, i]
                    bq = bt[q, i]
                    bt[p, i] = c * bp - s * bq
                    bt[q, i] = s * bp + c * bq
                for i in range(m):
                    vp = vt[p, i]
                    vq = vt[q, i]
                    vt[p, i] = c * vp - s * vq
                    vt[q, i] = s * vp + c * vq
        if np.sqrt(off) <= tol * max(trace, 1e-300):
            return sweep + 1, True
    return max_sweeps, False


def _complete_orthonormal(u, col):
    """Fill column `col` of `u` with a unit vector orthogonal to columns < col."""
    n = u.shape[0]
    for i in range(n):
        cand = np.zeros(n)
        cand[i] = 1.0
        cand -= u[:, :col] @ (u[:, :col].T @ cand)
        norm = np.linalg.norm(cand)
        if norm > 1e-6:
            u[:, col] = cand / norm
            return
    raise ConvergenceError("could not complete orthonormal basis")


def _svd_core(a):
    """Jacobi factorization of a tall-or-square matrix, unsorted signs."""
    n, m = a.shape
    bt = np.ascontiguousarray(a.T).copy()
    vt = np.eye(m)
    _, converged = _jacobi_sweeps(bt, vt, MAX_SWEEPS, OFF_DIAGONAL_TOL)
    if not converged:
        raise ConvergenceError(
            f"Jacobi SVD did not converge within {MAX_SWEEPS} sweeps"
        )
    norms = np.sqrt(np.sum(bt * bt, axis=1))
    order = np.argsort(-norms, kind="stable")
    k = min(n, m)
    order = order[:k]
    s = norms[order]
    u = np.zeros((n, k))
    v = vt[order].T.copy()
    cutoff = np.finfo(np.float64).tiny
    for j, idx in enumerate(order):
        if s[j] > cutoff:
            u[:, j] = bt[idx] / s[j]
        else:
            s[j] = 0.0
            _complete_orthonormal(u, j)
    return u, s, v


def svd(a) -> SvdResult:
    """One-sided Jacobi SVD with a deterministic sign convention.

    Signs are fixed so the largest-magnitude entry of each left singular
    vector is positive; singular values are sorted descending. Wide inputs
    are factored through their transpose so the rotation loop always works
    on the smaller column count.
    """
    a = require_matrix(a)
    if a.shape[1] > a.shape[0]:
        v, s, u = _svd_core(np.ascontiguousarray(a.T))
    else:
        u, s, v = _svd_core(a)
    for j in range(s.shape[0]):
        pivot = np.argmax(np.abs(u[:, j]))
        if u[pivot, j] < 0.0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]
    return SvdResult(u, s, v)


def nuclear_norm(a) -> float:
    """Sum of singular values of `a`."""
    return float(np.sum(svd(a).s))


def nuclear_norm_subgradient(a, tol=1e-10) -> np.ndarray:
    """Subgradient u1 @ v1.T of the nuclear norm at `a`.

    Only singular triplets with singular value > `tol` contribute, so the
    result has spectral norm at most 1 and is zero for the zero matrix.
    """
    if tol <= 0.0:
        raise ValidationError("tol must be positive")
    u, s, v = svd(a)
    active = s > tol
    if not np.any(active):
        return np.zeros(a.shape, dtype=np.float64)
    return u[:, active] @ v[:, active].T


def effective_rank(a, tol=1e-8) -> int:
    """Number of singular values above ``tol * sigma_max`` (0 for a zero matrix)."""
    if tol <= 0.0:
        raise ValidationError("tol must be positive")
    s = svd(a).s
    if s.size == 0 or s[0] <= 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))
