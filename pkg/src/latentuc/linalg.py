"""Small linear algebra kernels: CG, dense LU with partial pivoting, cyclic Jacobi.

Sparse matrices are ``scipy.sparse.csr_matrix``; dense matrices are 2-D numpy
arrays.  Every tolerance is a keyword argument.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class ConvergenceError(RuntimeError):
    """An iterative method hit its iteration cap."""


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, pivot_index: int, pivot: float):
        super().__init__(f"matrix is singular to tolerance at pivot {pivot_index} (|pivot| = {pivot:.3e})")
        self.pivot_index = pivot_index
        self.pivot = pivot


def csr(n_rows, n_cols, row_offsets, col_indices, values) -> sp.csr_matrix:
    """Build a CSR matrix from raw arrays, checking the structural invariants."""
    row_offsets = np.asarray(row_offsets, dtype=np.int64)
    col_indices = np.asarray(col_indices, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    if row_offsets.shape != (n_rows + 1,) or row_offsets[0] != 0 or np.any(np.diff(row_offsets) < 0):
        raise ValueError("row_offsets must be monotone, start at 0 and have length n_rows + 1")
    if row_offsets[-1] != len(col_indices) or len(col_indices) != len(values):
        raise ValueError("row_offsets[-1], col_indices and values disagree in length")
    if len(col_indices) and (col_indices.min() < 0 or col_indices.max() >= n_cols):
        raise ValueError("column index out of range")
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite matrix entry")
    return sp.csr_matrix((values, col_indices, row_offsets), shape=(n_rows, n_cols))


def cg_solve(A, b, tol: float = 1e-10, max_iter: int | None = None, x0=None, jacobi: bool = False):
    """Conjugate gradients for SPD ``A``; stops on ``|Ax - b| <= tol |b|``.

    Returns ``(x, iterations)``.  Raises ConvergenceError after ``max_iter``
    iterations (default ``10 n``).
    """
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape[1] != n or b.shape != (n,):
        raise ValueError(f"dimension mismatch: A is {A.shape}, b has shape {b.shape}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter is None:
        max_iter = 10 * n
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    dinv = 1.0 / A.diagonal() if jacobi else None
    z = r * dinv if jacobi else r
    p = z.copy()
    rz = r @ z
    target = tol * bnorm
    for it in range(1, max_iter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0.0:
            raise ConvergenceError(f"CG: non-positive curvature {pAp:.3e} at iteration {it}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= target:
            return x, it
        z = r * dinv if jacobi else r
        rz_new = r @ z
        p *= rz_new / rz
        p += z
        rz = rz_new
    raise ConvergenceError(
        f"CG did not converge in {max_iter} iterations (relative residual {np.linalg.norm(r) / bnorm:.3e})"
    )


def lu_factor(A, pivot_tol: float = 1e-14):
    """Doolittle LU with partial pivoting, packed in one array plus a permutation."""
    LU = np.array(A, dtype=float)
    n, m = LU.shape
    if n != m:
        raise ValueError("LU needs a square matrix")
    perm = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(LU[k:, k])))
        if abs(LU[p, k]) <= pivot_tol:
            raise SingularMatrixError(k, abs(LU[p, k]))
        if p != k:
            LU[[k, p]] = LU[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        LU[k + 1:, k] /= LU[k, k]
        LU[k + 1:, k + 1:] -= np.outer(LU[k + 1:, k], LU[k, k + 1:])
    return LU, perm


def lu_solve_dense(A, b, pivot_tol: float = 1e-14) -> np.ndarray:
    LU, perm = lu_factor(A, pivot_tol)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != LU.shape[0]:
        raise ValueError("dimension mismatch")
    y = b[perm].copy()
    n = len(y)
    for i in range(1, n):
        y[i] -= LU[i, :i] @ y[:i]
    for i in range(n - 1, -1, -1):
        y[i] = (y[i] - LU[i, i + 1:] @ y[i + 1:]) / LU[i, i]
    return y


def symmetric_eig(A, sym_tol: float = 1e-12, tol: float = 1e-15, max_sweeps: int = 60):
    """Eigen-decomposition of a symmetric matrix by the cyclic Jacobi method.

    Returns eigenvalues in descending order and the matching eigenvectors as
    columns.  ``sym_tol`` is relative to the largest entry.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ValueError("symmetric_eig needs a square matrix")
    scale = np.abs(A).max() if A.size else 0.0
    if np.abs(A - A.T).max(initial=0.0) > sym_tol * max(scale, 1.0):
        raise ValueError("matrix is not symmetric")
    V = np.eye(n)
    if scale == 0.0:
        return np.zeros(n), V
    A = 0.5 * (A + A.T)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(A, 1) ** 2))
        if off <= tol * np.sqrt(np.sum(A * A)):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0.0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = A[:, p].copy()
                aq = A[:, q]
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap = A[p, :].copy()
                aq = A[q, :]
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q]
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        raise ConvergenceError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]
