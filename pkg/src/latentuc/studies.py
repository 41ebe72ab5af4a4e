"""Mesh-convergence and stability studies built from the library pieces."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datagen import fourier_basis, sample_fourier_dataset
from .fem import assemble_nitsche, nitsche_solve, norms
from .inverse import build_reduced_basis, make_observation, rayleigh_min, stabilized_projection
from .mesh import Disc, build_unit_square_mesh, prolong
from .pod import fit_pod

DEFAULT_OMEGA = Disc((0.0, 0.0), 0.3)
# fixed coefficients of the reference harmonic field (first five Fourier modes)
REFERENCE_COEFFS = (0.5, 1.0, -0.7, 0.4, 0.3)


@dataclass
class StudyResult:
    columns: list
    rows: list
    slopes: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[self.columns.index(name)] for r in self.rows])


def loglog_slope(h, err) -> float:
    """Least-squares slope of log(err) against log(h)."""
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def _check_nested(meshes, ref_n):
    for n in meshes:
        if ref_n % n or n >= ref_n:
            raise ValueError(f"mesh {n} is not a proper coarsening of the reference mesh {ref_n}")


def projection_convergence(meshes=(10, 20, 40, 80), ref_n: int = 160, n_modes: int = 5, omega: Disc = DEFAULT_OMEGA,
                           coeffs=None, beta: float = 10.0) -> StudyResult:
    """H1(Omega) error of the stabilized projection against a fine-mesh harmonic reference.

    The reference u_N is the Nitsche extension on the ``ref_n`` mesh of a fixed
    combination of the first ``n_modes`` Fourier traces.  Its restriction to
    omega is the observation; every coarse solve integrates it exactly on the
    reference mesh and the coarse field is prolonged there for the error.
    """
    _check_nested(meshes, ref_n)
    coeffs = np.asarray(REFERENCE_COEFFS[:n_modes] if coeffs is None else coeffs, dtype=float)
    if coeffs.shape != (n_modes,):
        raise ValueError(f"need {n_modes} reference coefficients")
    fine = build_unit_square_mesh(ref_n)
    ref_basis = build_reduced_basis(fine, fourier_basis(fine.boundary_arclength, n_modes), omega, beta)
    u_ref = ref_basis.field_of(coeffs)
    obs = make_observation(fine, omega, u_ref, provenance={"reference": "nitsche", "ref_mesh": ref_n})
    ref_h1 = norms(fine, u_ref)["h1"]
    rows = []
    for n in meshes:
        mesh = build_unit_square_mesh(n)
        basis = build_reduced_basis(mesh, fourier_basis(mesh.boundary_arclength, n_modes), omega, beta)
        res = stabilized_projection(basis, obs, mesh)
        err = norms(fine, prolong(mesh, fine, res.field) - u_ref)
        rows.append([n, mesh.h, err["h1"], err["l2"], err["h1"] / ref_h1])
    cols = ["n", "h", "H1_error", "L2_error", "H1_relative"]
    out = StudyResult(cols, rows)
    out.slopes = {"H1": loglog_slope(out.column("h"), out.column("H1_error")),
                  "L2": loglog_slope(out.column("h"), out.column("L2_error"))}
    out.extra = {"ref_mesh": ref_n, "n_modes": n_modes, "omega": omega.to_dict(), "coeffs": coeffs.tolist(), "beta": beta}
    return out


def quadratic_trace(points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    return p[:, 0] ** 2 - p[:, 1] ** 2


def nitsche_convergence(meshes=(10, 20, 40), ref_n: int = 160, beta: float = 10.0, trace=quadratic_trace) -> StudyResult:
    """L2 and H1 errors of Nitsche solves against the reference-mesh Nitsche solve."""
    _check_nested(meshes, ref_n)

    def solve(mesh):
        return nitsche_solve(assemble_nitsche(mesh, beta), mesh, trace(mesh.nodes[mesh.boundary_nodes]))

    fine = build_unit_square_mesh(ref_n)
    u_ref = solve(fine)
    rows = []
    for n in meshes:
        mesh = build_unit_square_mesh(n)
        err = norms(fine, prolong(mesh, fine, solve(mesh)) - u_ref)
        rows.append([n, mesh.h, err["l2"], err["h1"]])
    out = StudyResult(["n", "h", "L2_error", "H1_error"], rows)
    out.slopes = {"L2": loglog_slope(out.column("h"), out.column("L2_error")),
                  "H1": loglog_slope(out.column("h"), out.column("H1_error"))}
    out.extra = {"ref_mesh": ref_n, "beta": beta}
    return out


def rayleigh_study(mesh_n: int = 10, num_coeffs: int = 21, count: int = 1000, seed: int = 42,
                   noise_std: float = 0.15, omega: Disc = DEFAULT_OMEGA, beta: float = 10.0) -> StudyResult:
    """Smallest Gram eigenvalues for nested POD bases of a Fourier dataset, N = 1 .. num_coeffs."""
    mesh = build_unit_square_mesh(mesh_n)
    data = sample_fourier_dataset(mesh, num_coeffs, count, seed, noise_std=noise_std)
    pod = fit_pod(data.samples, num_coeffs, mesh_n=mesh_n)
    basis = build_reduced_basis(mesh, pod, omega, beta)
    rows = []
    for k in range(1, num_coeffs + 1):
        sub = basis.truncate(k)
        rows.append([k, rayleigh_min(sub, False), rayleigh_min(sub, True)])
    out = StudyResult(["N", "lambda_min_omega", "lambda_min_mh"], rows)
    out.extra = {"mesh_n": mesh_n, "seed": seed, "count": count, "noise_std": noise_std,
                 "omega": omega.to_dict(), "beta": beta}
    return out
