"""Reconstruction from observations in a subdomain omega.

Three routes: the stabilized projection onto the discrete reduced basis
(linear PDE), the plain L2(omega) projection (unstabilized), and gradient
descent over latent or coefficient space through the operator network.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fem import (assemble_jump_penalty, assemble_nitsche, assemble_stiffness, assemble_subdomain_mass,
                  boundary_stab_matrix, nitsche_solve)
from .linalg import SingularMatrixError, lu_solve_dense, symmetric_eig
from .mesh import Disc, Mesh, build_unit_square_mesh, child_elements, element_nodes, prolong, subdomain_elements
from .neural import AdamState, Mlp, _backward, adam_step, mlp_forward, operator_fields
from .pod import PodBasis
from .rng import Rng

log = logging.getLogger(__name__)


@dataclass
class Observation:
    omega: Disc
    mesh_n: int
    node_indices: np.ndarray
    values: np.ndarray
    noise_std: float = 0.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.node_indices = np.asarray(self.node_indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.node_indices.shape or not np.all(np.isfinite(self.values)):
            raise ValueError("observation values must be finite and match the node list")
        if self.omega.radius <= 0:
            raise ValueError("degenerate observation subdomain")

    def full(self, n_nodes: int) -> np.ndarray:
        u = np.zeros(n_nodes)
        u[self.node_indices] = self.values
        return u

    def to_dict(self) -> dict:
        return {"omega": self.omega.to_dict(), "mesh_n": self.mesh_n,
                "node_indices": self.node_indices.tolist(), "values": self.values.tolist(),
                "noise_std": self.noise_std, "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d: dict) -> "Observation":
        return cls(Disc.from_dict(d["omega"]), int(d["mesh_n"]), d["node_indices"], d["values"],
                   float(d.get("noise_std", 0.0)), d.get("provenance", {}))


def make_observation(mesh: Mesh, omega: Disc, u, noise_std: float = 0.0, seed: int = 0,
                     relative: bool = False, provenance: dict | None = None) -> Observation:
    """Restrict a nodal field to the nodes of omega, optionally adding Gaussian noise.

    With ``relative=True`` the noise standard deviation is ``noise_std`` times
    the RMS of the restricted values.
    """
    nodes = element_nodes(mesh, subdomain_elements(mesh, omega))
    values = np.asarray(u, dtype=float)[nodes].copy()
    std = noise_std * (np.sqrt(np.mean(values ** 2)) if relative else 1.0)
    if std > 0:
        values += Rng(seed, stream=4).normal(0.0, std, len(nodes))
    prov = dict(provenance or {})
    prov.update({"noise_seed": seed, "noise_relative": relative, "noise_factor": noise_std})
    return Observation(omega, mesh.n, nodes, values, float(std), prov)


@dataclass
class InverseResult:
    coefficients: np.ndarray
    field: np.ndarray
    loss_trace: list
    iterations: int
    final_objective: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"coefficients": np.asarray(self.coefficients).tolist(), "field": self.field.tolist(),
                "loss_trace": list(map(float, self.loss_trace)), "iterations": self.iterations,
                "final_objective": self.final_objective, **self.extra}


@dataclass
class ReducedBasis:
    """Nitsche extensions of N boundary modes plus their Gram matrices on omega."""

    mesh_n: int
    modes: np.ndarray           # (n_boundary, N) exact boundary data
    fields: np.ndarray          # (N, n_nodes)
    omega: Disc
    omega_elements: np.ndarray
    gram_omega: np.ndarray
    gram_jump: np.ndarray
    gram_boundary: np.ndarray
    beta: float

    @property
    def n_modes(self) -> int:
        return self.fields.shape[0]

    @property
    def gram_mh(self) -> np.ndarray:
        return self.gram_omega + self.gram_boundary + self.gram_jump

    def field_of(self, coeffs) -> np.ndarray:
        return np.asarray(coeffs, dtype=float) @ self.fields

    def truncate(self, n: int) -> "ReducedBasis":
        s = slice(0, n)
        return ReducedBasis(self.mesh_n, self.modes[:, s], self.fields[s], self.omega, self.omega_elements,
                            self.gram_omega[s, s], self.gram_jump[s, s], self.gram_boundary[s, s], self.beta)


def build_reduced_basis(mesh: Mesh, modes, omega: Disc, beta: float = 10.0, tol: float = 1e-12,
                        threads: int = 1) -> ReducedBasis:
    """Nitsche-extend each mode and assemble the Gram matrices.

    ``threads > 1`` runs the independent Nitsche solves in a thread pool; the
    result does not depend on the thread count.
    """
    if isinstance(modes, PodBasis):
        if modes.mesh_n is not None and modes.mesh_n != mesh.n:
            raise ValueError(f"POD basis belongs to a {modes.mesh_n}x{modes.mesh_n} mesh, not {mesh.n}x{mesh.n}")
        modes = modes.modes
    modes = np.asarray(modes, dtype=float)
    if modes.ndim == 1:
        modes = modes[:, None]
    if modes.shape[0] != len(mesh.boundary_nodes):
        raise ValueError("boundary modes do not match the mesh boundary")
    forms = assemble_nitsche(mesh, beta)
    solve = lambda j: nitsche_solve(forms, mesh, modes[:, j], tol=tol)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            fields = np.array(list(pool.map(solve, range(modes.shape[1]))))
    else:
        fields = np.array([solve(j) for j in range(modes.shape[1])])
    elems = subdomain_elements(mesh, omega)
    M = assemble_subdomain_mass(mesh, elems)
    S = assemble_jump_penalty(mesh)
    D = fields[:, mesh.boundary_nodes] - modes.T
    gram_omega = fields @ (M @ fields.T)
    gram_jump = fields @ (S @ fields.T)
    gram_boundary = D @ boundary_stab_matrix(mesh) @ D.T
    sym = lambda A: 0.5 * (A + A.T)
    return ReducedBasis(mesh.n, modes, fields, omega, elems, sym(gram_omega), sym(gram_jump), sym(gram_boundary), beta)


def _check_omega(basis: ReducedBasis, obs: Observation):
    if obs.omega != basis.omega:
        raise ValueError(f"observation subdomain {obs.omega} differs from the basis subdomain {basis.omega}")


def _observation_space(basis: ReducedBasis, obs: Observation, mesh: Mesh):
    """Mass matrix over omega_h on the observation mesh and the basis fields there.

    If the observation lives on a finer nested mesh the integrals are taken
    exactly there, over the fine triangles inside the coarse omega_h.
    """
    _check_omega(basis, obs)
    if obs.mesh_n == mesh.n:
        return assemble_subdomain_mass(mesh, basis.omega_elements), basis.fields.T, mesh
    if obs.mesh_n % mesh.n:
        raise ValueError(f"observation mesh {obs.mesh_n} is not a refinement of mesh {mesh.n}")
    fine = build_unit_square_mesh(obs.mesh_n)
    M = assemble_subdomain_mass(fine, child_elements(mesh, fine, basis.omega_elements))
    return M, prolong(mesh, fine, basis.fields.T), fine


def observation_load(basis: ReducedBasis, obs: Observation, mesh: Mesh) -> np.ndarray:
    """b_n = (u_0, phi_n) over omega_h."""
    M, P, target = _observation_space(basis, obs, mesh)
    return P.T @ (M @ obs.full(target.n_nodes))


def _projection(basis: ReducedBasis, obs: Observation, mesh: Mesh, gram: np.ndarray, label: str) -> InverseResult:
    M, P, target = _observation_space(basis, obs, mesh)
    u0 = obs.full(target.n_nodes)
    b = P.T @ (M @ u0)
    try:
        coeffs = lu_solve_dense(gram, b)
    except SingularMatrixError as exc:
        exc.min_eigenvalue = float(symmetric_eig(gram)[0][-1])
        exc.args = (f"{label} Gram matrix: {exc.args[0]}; smallest eigenvalue {exc.min_eigenvalue:.3e}",)
        raise
    d = P @ coeffs - u0
    obj = float(0.5 * d @ (M @ d))
    return InverseResult(coeffs, basis.field_of(coeffs), [obj], 1, obj, {"method": label})


def stabilized_projection(basis: ReducedBasis, obs: Observation, mesh: Mesh | None = None) -> InverseResult:
    """Solve gram_mh u = b: the m_h-projection of the observation onto the reduced basis."""
    mesh = build_unit_square_mesh(basis.mesh_n) if mesh is None else mesh
    return _projection(basis, obs, mesh, basis.gram_mh, "stabilized")


def linear_superposition_solve(basis: ReducedBasis, obs: Observation, mesh: Mesh | None = None,
                               stabilized: bool = True) -> InverseResult:
    """Superpose the Nitsche basis fields; without stabilization this is the plain L2(omega) fit."""
    mesh = build_unit_square_mesh(basis.mesh_n) if mesh is None else mesh
    if stabilized:
        return stabilized_projection(basis, obs, mesh)
    return _projection(basis, obs, mesh, basis.gram_omega, "unstabilized")


def rayleigh_min(basis: ReducedBasis, stabilized: bool) -> float:
    """Smallest eigenvalue of the (stabilized) Gram matrix: the discrete stability constant."""
    return float(symmetric_eig(basis.gram_mh if stabilized else basis.gram_omega)[0][-1])


def disc_stability_constant(n: int, r_omega: float) -> float:
    """||phi||_Omega / ||phi||_omega for phi = r^n cos(n theta), Omega the unit disc, omega radius r_omega."""
    if n < 0:
        raise ValueError("mode index must be non-negative")
    if not 0.0 < r_omega <= 1.0:
        raise ValueError(f"r_omega must lie in (0, 1], got {r_omega}")
    angular = 2.0 * math.pi if n == 0 else math.pi   # int cos^2(n theta) over a full turn
    radial = lambda R: R ** (2 * n + 2) / (2 * n + 2)
    return math.sqrt(radial(1.0) * angular / (radial(r_omega) * angular))


# ---------------------------------------------------------------------------
# latent-space optimisation through the operator network


def _data_matrix(mesh: Mesh, elements, norm: str):
    M = assemble_subdomain_mass(mesh, elements)
    if norm.upper() == "L2":
        return M
    if norm.upper() == "H1":
        return (M + assemble_stiffness(mesh, elements)).tocsr()
    raise ValueError(f"unknown data norm {norm!r}")


def composed_fields(net: Mlp, pod: PodBasis, mesh: Mesh, z, decoder: Mlp | None = None):
    """Nodal fields for latent points (or coefficients when ``decoder`` is None)."""
    a = mlp_forward(decoder, np.atleast_2d(z)) if decoder is not None else np.atleast_2d(z)
    return operator_fields(net, pod, mesh, a)


def latent_objective_and_grad(net: Mlp, pod: PodBasis, mesh: Mesh, z, u0, W, decoder: Mlp | None = None):
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if decoder is not None:
        a, dec_cache = mlp_forward(decoder, z, return_cache=True)
    else:
        a = z
    V, cache = operator_fields(net, pod, mesh, a, return_cache=True)
    d = V[0] - u0
    Wd = W @ d
    obj = 0.5 * float(d @ Wd)
    _, da = _backward(net, cache, Wd[None, mesh.interior_nodes])
    da = da + Wd[mesh.boundary_nodes] @ pod.modes
    if decoder is not None:
        _, dz = _backward(decoder, dec_cache, da)
    else:
        dz = da
    return obj, dz[0], V[0]


def latent_inverse_solve(net: Mlp, pod: PodBasis, mesh: Mesh, obs: Observation, z0, decoder: Mlp | None = None,
                         lr: float = 1e-2, iterations: int = 2000, norm: str = "L2") -> InverseResult:
    """Adam on 1/2 ||u_0 - field(z)||^2 over omega; returns the best iterate seen.

    ``field(z)`` takes its boundary values from ``pod_decode(decoder(z))`` and
    its interior values from the operator network, so every iterate satisfies
    the boundary-data constraint.  Without a decoder ``z`` is the coefficient
    vector itself.
    """
    if obs.mesh_n != mesh.n:
        raise ValueError("latent solves need the observation on the network's mesh")
    in_dim = decoder.layer_dims[0] if decoder is not None else net.layer_dims[0]
    if decoder is not None and decoder.layer_dims[-1] != net.layer_dims[0]:
        raise ValueError("decoder output width differs from the operator network input width")
    z = np.array(z0, dtype=float).reshape(-1)
    if z.shape != (in_dim,):
        raise ValueError(f"start point must have length {in_dim}")
    elems = subdomain_elements(mesh, obs.omega)
    W = _data_matrix(mesh, elems, norm)
    u0 = obs.full(mesh.n_nodes)
    state = AdamState.zeros_like([z])
    trace = []
    best = (math.inf, z.copy(), None)
    for it in range(iterations + 1):
        obj, g, V = latent_objective_and_grad(net, pod, mesh, z, u0, W, decoder)
        if not math.isfinite(obj):
            raise FloatingPointError(f"non-finite objective at iteration {it}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at iteration {it}")
        trace.append(obj)
        if obj < best[0]:
            best = (obj, z.copy(), V)
        if it == iterations:
            break
        adam_step([z], [g], state, lr)
    obj, zb, V = best
    log.info("latent solve: objective %.3e -> %.3e (%s norm)", trace[0], obj, norm)
    return InverseResult(zb, V, trace, iterations, obj, {"norm": norm, "decoder": decoder is not None})
