"""Synthetic boundary-data families: Fourier traces and parametric coefficients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import PERIMETER, Mesh
from .rng import Rng

# (n_X, L) -> (bell midpoints x0, sampling range of x_k)
GAUSSIAN_CASES = {
    "2x5": (2, 5, (0, 4, 8, 12, 16), (-2.0, 18.0)),
    "3x6": (3, 6, (0, 2, 4, 6, 8, 10), (-2.0, 12.0)),
    "3x7": (3, 7, (0, 2, 4, 6, 8, 10, 12), (-2.0, 14.0)),
    "4x8": (4, 8, (0, 2, 4, 6, 8, 10, 12, 14), (-2.0, 16.0)),
}
POLYNOMIAL_CASES = ("linear", "quadratic")

# stream indices used when splitting a dataset seed
_COEFFS, _NOISE, _PARAMS, _MATRICES = range(4)


@dataclass
class Dataset:
    kind: str
    samples: np.ndarray
    seed: int
    noise_std: float
    num_coeffs: int
    mesh_n: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return self.samples.shape[0]


def fourier_basis(arclength, N: int, perimeter: float = PERIMETER) -> np.ndarray:
    """Columns 1, sin(2 pi x / l), cos(2 pi x / l), sin(4 pi x / l), ... (N of them)."""
    if N < 1 or N % 2 == 0:
        raise ValueError(f"number of Fourier coefficients must be odd, got {N}")
    x = np.asarray(arclength, dtype=float)
    cols = [np.ones_like(x)]
    for n in range(1, (N - 1) // 2 + 1):
        w = 2.0 * n * np.pi * x / perimeter
        cols += [np.sin(w), np.cos(w)]
    return np.column_stack(cols)


def fourier_boundary(mesh: Mesh, N: int, coeffs, noise=None) -> np.ndarray:
    """Perturbed truncated Fourier series at the boundary nodes of ``mesh``."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != N:
        raise ValueError(f"expected {N} coefficients, got {coeffs.shape[-1]}")
    c = coeffs if noise is None else coeffs + np.asarray(noise, dtype=float)
    return c @ fourier_basis(mesh.boundary_arclength, N).T


def sample_fourier_dataset(mesh: Mesh, N: int, count: int, seed: int,
                           coeff_range=(-1.0, 1.0), noise_std: float = 0.15) -> Dataset:
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = Rng(seed)
    coeffs = rng.spawn(_COEFFS).uniform(coeff_range[0], coeff_range[1], (count, N))
    noise = rng.spawn(_NOISE).normal(0.0, noise_std, (count, N))
    return Dataset(
        kind="fourier",
        samples=fourier_boundary(mesh, N, coeffs, noise),
        seed=seed,
        noise_std=noise_std,
        num_coeffs=N,
        mesh_n=mesh.n,
        extra={"coeff_range": list(coeff_range)},
    )


def polynomial_coeffs(A, B, x, delta) -> np.ndarray:
    """a = A x + B x^2 + delta, row-wise for a batch of parameter vectors."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    x = np.asarray(x, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if A.shape != B.shape or x.shape[-1] != A.shape[1] or delta.shape[-1] != A.shape[0]:
        raise ValueError(f"shape mismatch: A{A.shape} B{B.shape} x{x.shape} delta{delta.shape}")
    return x @ A.T + (x * x) @ B.T + delta


def gaussian_coeffs(n_X: int, L: int, gamma: float, x, x0, delta, J: int | None = None) -> np.ndarray:
    """a_j = exp(-gamma (x_k - x0_l)^2) + delta_j with l = j mod L, k = j mod n_X."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    J = n_X * L if J is None else J
    x = np.asarray(x, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if x.shape[-1] != n_X or x0.shape != (L,) or delta.shape[-1] != J:
        raise ValueError(f"shape mismatch: x{x.shape} x0{x0.shape} delta{delta.shape} for n_X={n_X}, L={L}, J={J}")
    j = np.arange(J)
    return np.exp(-gamma * (x[..., j % n_X] - x0[j % L]) ** 2) + delta


def sample_parametric_dataset(kind: str, case: str | None, count: int, seed: int, **params) -> Dataset:
    """Coefficient rows for the polynomial or Gaussian-bump families.

    Polynomial cases: ``linear`` (B = 0) or ``quadratic``; parameters ``J``
    (9), ``n_X`` (3), ``x_range`` ((-2, 2)), ``noise_std`` (1.0).  Gaussian
    cases are named ``"2x5"``, ``"3x6"``, ``"3x7"``, ``"4x8"``; pass
    ``case=None`` with ``n_X, L, x0, x_range`` for a custom one.  Gaussian
    options: ``gamma`` (2), ``J`` (n_X L), ``noise_std`` (0.15).
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = Rng(seed)
    if kind == "polynomial":
        if case not in POLYNOMIAL_CASES:
            raise ValueError(f"unknown polynomial case {case!r}; choose from {POLYNOMIAL_CASES}")
        J = int(params.get("J", 9))
        n_X = int(params.get("n_X", 3))
        lo, hi = params.get("x_range", (-2.0, 2.0))
        noise_std = float(params.get("noise_std", 1.0))
        mats = rng.spawn(_MATRICES)
        A = mats.uniform(-1.0, 1.0, (J, n_X))
        B = mats.uniform(-1.0, 1.0, (J, n_X)) if case == "quadratic" else np.zeros((J, n_X))
        x = rng.spawn(_PARAMS).uniform(lo, hi, (count, n_X))
        delta = rng.spawn(_NOISE).normal(0.0, noise_std, (count, J))
        samples = polynomial_coeffs(A, B, x, delta)
        extra = {"case": case, "n_X": n_X, "x_range": [lo, hi], "A": A.tolist(), "B": B.tolist()}
    elif kind == "gaussian":
        if case is not None:
            if case not in GAUSSIAN_CASES:
                raise ValueError(f"unknown gaussian case {case!r}; choose from {sorted(GAUSSIAN_CASES)}")
            n_X, L, x0, (lo, hi) = GAUSSIAN_CASES[case]
        else:
            try:
                n_X, L, x0 = int(params["n_X"]), int(params["L"]), params["x0"]
                lo, hi = params["x_range"]
            except KeyError as exc:
                raise ValueError(f"custom gaussian case needs n_X, L, x0 and x_range (missing {exc})") from None
        gamma = float(params.get("gamma", 2.0))
        J = int(params.get("J", n_X * L))
        noise_std = float(params.get("noise_std", 0.15))
        x = rng.spawn(_PARAMS).uniform(lo, hi, (count, n_X))
        delta = rng.spawn(_NOISE).normal(0.0, noise_std, (count, J))
        samples = gaussian_coeffs(n_X, L, gamma, x, x0, delta, J)
        extra = {"case": case, "n_X": n_X, "L": L, "x0": list(map(float, x0)), "x_range": [lo, hi], "gamma": gamma}
    else:
        raise ValueError(f"unknown parametric kind {kind!r}")
    # x and delta come from separate streams: noise_std=0 with the same seed gives the clean rows
    return Dataset(kind=kind, samples=samples, seed=seed, noise_std=noise_std,
                   num_coeffs=samples.shape[1], extra=extra)


def raw_coefficients(samples, seed: int = 0, noise_std: float = 0.0) -> Dataset:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    return Dataset(kind="raw-coefficients", samples=samples, seed=seed, noise_std=noise_std,
                   num_coeffs=samples.shape[1])
