"""Proper orthogonal decomposition of boundary snapshots (rows of X)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import symmetric_eig


@dataclass
class PodBasis:
    modes: np.ndarray          # (n_boundary, N), orthonormal columns
    spectrum: np.ndarray       # all eigenvalues of X^T X, descending
    mesh_n: int | None = None
    mean: np.ndarray | None = None

    @property
    def n_modes_kept(self) -> int:
        return self.modes.shape[1]

    @property
    def n_boundary(self) -> int:
        return self.modes.shape[0]

    def truncate(self, n: int) -> "PodBasis":
        if not 1 <= n <= self.n_modes_kept:
            raise ValueError(f"cannot keep {n} of {self.n_modes_kept} modes")
        return PodBasis(self.modes[:, :n].copy(), self.spectrum, self.mesh_n, self.mean)


def fit_pod(X, n_keep: int | str = "auto", rel_tol: float = 1e-8, center: bool = False,
            method: str = "svd", mesh_n: int | None = None) -> PodBasis:
    """Top eigenvectors of X^T X.

    ``method="svd"`` takes them from a thin SVD of X (eigenvalues are the
    squared singular values), which keeps the trailing part of the spectrum
    at rounding level instead of at rounding level times the condition
    number.  ``method="gram"`` forms X^T X and uses the Jacobi eigensolver.
    ``n_keep="auto"`` keeps eigenvalues >= ``rel_tol`` times the largest.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("snapshot matrix must be 2-D (rows are samples)")
    mean = X.mean(axis=0) if center else None
    Xc = X - mean if center else X
    ncols = X.shape[1]
    if method == "svd":
        _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
        lam = np.zeros(ncols)
        lam[: len(s)] = s ** 2
        vecs = Vt.T
    elif method == "gram":
        lam, vecs = symmetric_eig(Xc.T @ Xc)
        lam = np.clip(lam, 0.0, None)
    else:
        raise ValueError(f"unknown method {method!r}")
    if lam[0] <= 0.0:
        raise ValueError("degenerate snapshot data: largest eigenvalue is zero")
    if n_keep == "auto":
        n_keep = int(np.sum(lam >= rel_tol * lam[0]))
    n_keep = int(n_keep)
    if not 1 <= n_keep <= min(X.shape[0], ncols, vecs.shape[1]):
        raise ValueError(f"cannot keep {n_keep} modes from a {X.shape[0]}x{ncols} snapshot matrix")
    modes = vecs[:, :n_keep].copy()
    # fix the sign: largest-magnitude entry of each mode is positive
    idx = np.argmax(np.abs(modes), axis=0)
    modes *= np.sign(modes[idx, np.arange(n_keep)])
    return PodBasis(modes=modes, spectrum=lam, mesh_n=mesh_n, mean=mean)


def pod_encode(basis: PodBasis, g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape[-1] != basis.n_boundary:
        raise ValueError(f"expected {basis.n_boundary} boundary values, got {g.shape[-1]}")
    if basis.mean is not None:
        g = g - basis.mean
    return g @ basis.modes


def pod_decode(basis: PodBasis, a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != basis.n_modes_kept:
        raise ValueError(f"expected {basis.n_modes_kept} coefficients, got {a.shape[-1]}")
    g = a @ basis.modes.T
    return g if basis.mean is None else g + basis.mean


def significant_count(values, rel_tol: float) -> int:
    values = np.asarray(values, dtype=float)
    return int(np.sum(values > rel_tol * values[0]))
