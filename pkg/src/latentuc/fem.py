"""P1 finite elements on :class:`~latentuc.mesh.Mesh`.

Element integrals are evaluated in closed form (P1 gradients are constant per
triangle, products of two P1 functions integrate exactly with the consistent
mass matrix), so no quadrature error enters any of the forms below.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .linalg import ConvergenceError, cg_solve
from .mesh import Mesh

log = logging.getLogger(__name__)

_LOCAL_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


@dataclass
class Field:
    mesh_n: int
    dofs: np.ndarray

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, dtype=float)
        if self.dofs.shape != ((self.mesh_n + 1) ** 2,):
            raise ValueError(f"field on a {self.mesh_n}x{self.mesh_n} mesh needs {(self.mesh_n + 1) ** 2} dofs")
        if not np.all(np.isfinite(self.dofs)):
            raise ValueError("field has non-finite dofs")


def _elements(mesh: Mesh, elements):
    if elements is None:
        return np.arange(mesh.n_triangles)
    elements = np.asarray(elements, dtype=np.int64)
    if elements.size == 0:
        raise ValueError("empty element subset")
    return elements


def _assemble(mesh: Mesh, elements, local):
    """Scatter per-element 3x3 matrices ``local`` (E, 3, 3) into a CSR matrix."""
    tri = mesh.triangles[elements]
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_nodes
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def assemble_stiffness(mesh: Mesh, elements=None) -> sp.csr_matrix:
    e = _elements(mesh, elements)
    G = mesh.gradients()[e]
    local = mesh.areas()[e, None, None] * np.einsum("eid,ejd->eij", G, G)
    return _assemble(mesh, e, local)


def assemble_subdomain_mass(mesh: Mesh, elements=None) -> sp.csr_matrix:
    e = _elements(mesh, elements)
    local = mesh.areas()[e, None, None] * _LOCAL_MASS
    return _assemble(mesh, e, local)


def _edge_geometry(mesh: Mesh):
    a, b = mesh.boundary_edges.T
    t = mesh.nodes[b] - mesh.nodes[a]
    length = np.hypot(t[:, 0], t[:, 1])
    normal = np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None]  # outward for a CCW ring
    return a, b, length, normal


def assemble_boundary_mass(mesh: Mesh) -> sp.csr_matrix:
    a, b, length, _ = _edge_geometry(mesh)
    rows = np.concatenate([a, a, b, b])
    cols = np.concatenate([a, b, a, b])
    vals = np.concatenate([2 * length, length, length, 2 * length]) / 6.0
    n = mesh.n_nodes
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def assemble_normal_derivative(mesh: Mesh) -> sp.csr_matrix:
    """Matrix B with ``w^T B v = (d_n v, w)`` on the boundary."""
    a, b, length, normal = _edge_geometry(mesh)
    t = mesh.boundary_edge_triangles
    dn = np.einsum("ekd,ed->ek", mesh.gradients()[t], normal)  # (E, 3)
    tri = mesh.triangles[t]
    w = 0.5 * length[:, None] * dn
    rows = np.concatenate([np.repeat(a, 3), np.repeat(b, 3)])
    cols = np.concatenate([tri.ravel(), tri.ravel()])
    vals = np.concatenate([w.ravel(), w.ravel()])
    n = mesh.n_nodes
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


@dataclass
class NitscheForms:
    A: sp.csr_matrix
    beta: float
    B: sp.csr_matrix
    Mb: sp.csr_matrix
    h: float
    mesh_n: int

    def rhs(self, g_full: np.ndarray) -> np.ndarray:
        return (self.beta / self.h) * (self.Mb @ g_full) - self.B.T @ g_full


def assemble_nitsche(mesh: Mesh, beta: float = 10.0) -> NitscheForms:
    if beta <= 0:
        raise ValueError("Nitsche penalty must be positive")
    K = assemble_stiffness(mesh)
    B = assemble_normal_derivative(mesh)
    Mb = assemble_boundary_mass(mesh)
    A = (K - B - B.T + (beta / mesh.h) * Mb).tocsr()
    return NitscheForms(A=A, beta=beta, B=B.tocsr(), Mb=Mb, h=mesh.h, mesh_n=mesh.n)


def boundary_to_full(mesh: Mesh, g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape[0] != len(mesh.boundary_nodes):
        raise ValueError(f"expected {len(mesh.boundary_nodes)} boundary values, got {g.shape[0]}")
    full = np.zeros((mesh.n_nodes,) + g.shape[1:])
    full[mesh.boundary_nodes] = g
    return full


def nitsche_solve(forms: NitscheForms, mesh: Mesh, g, tol: float = 1e-12, max_iter: int | None = None) -> np.ndarray:
    """Weak-Dirichlet Laplace solve for boundary nodal data ``g``; returns nodal values."""
    if forms.mesh_n != mesh.n:
        raise ValueError("Nitsche forms were assembled on a different mesh")
    rhs = forms.rhs(boundary_to_full(mesh, g))
    u, _ = cg_solve(forms.A, rhs, tol=tol, max_iter=max_iter)
    return u


def assemble_jump_penalty(mesh: Mesh) -> sp.csr_matrix:
    """Normal-gradient jump penalty: sum over interior faces of h |F| [dv/dn][dw/dn]."""
    a, b, t1, t2 = mesh.interior_faces.T
    e = mesh.nodes[b] - mesh.nodes[a]
    length = np.hypot(e[:, 0], e[:, 1])
    normal = np.column_stack([e[:, 1], -e[:, 0]]) / length[:, None]
    G = mesh.gradients()
    c = np.concatenate([
        np.einsum("ekd,ed->ek", G[t1], normal),
        -np.einsum("ekd,ed->ek", G[t2], normal),
    ], axis=1)  # (F, 6)
    idx = np.concatenate([mesh.triangles[t1], mesh.triangles[t2]], axis=1)
    w = (mesh.h * length)[:, None, None] * c[:, :, None] * c[:, None, :]
    rows = np.repeat(idx, 6, axis=1).ravel()
    cols = np.tile(idx, (1, 6)).ravel()
    n = mesh.n_nodes
    return sp.csr_matrix((w.ravel(), (rows, cols)), shape=(n, n))


def boundary_stab_matrix(mesh: Mesh) -> np.ndarray:
    """Dense matrix S over boundary nodes: ``s(d_a, d_b) = d_a^T S d_b``.

    ``s`` is ``h^-1 (d_a, d_b) + h (d_a', d_b')`` on the boundary, with P1
    interpolation of the nodal differences along each boundary edge.
    """
    nb = len(mesh.boundary_nodes)
    pos = np.empty(mesh.n_nodes, dtype=np.int64)
    pos[mesh.boundary_nodes] = np.arange(nb)
    a, b, length, _ = _edge_geometry(mesh)
    ia, ib = pos[a], pos[b]
    h = mesh.h
    S = np.zeros((nb, nb))
    np.add.at(S, (ia, ia), 2 * length / 6 / h + h / length)
    np.add.at(S, (ib, ib), 2 * length / 6 / h + h / length)
    np.add.at(S, (ia, ib), length / 6 / h - h / length)
    np.add.at(S, (ib, ia), length / 6 / h - h / length)
    return S


def boundary_stab_pair(mesh: Mesh, diff_a, diff_b) -> float:
    """Boundary stabilization value for two boundary differences (discrete trace minus exact data)."""
    diff_a = np.asarray(diff_a, dtype=float)
    diff_b = np.asarray(diff_b, dtype=float)
    nb = len(mesh.boundary_nodes)
    if diff_a.shape != (nb,) or diff_b.shape != (nb,):
        raise ValueError(f"boundary differences must have length {nb}")
    return float(diff_a @ boundary_stab_matrix(mesh) @ diff_b)


# ---------------------------------------------------------------------------
# nonlinear energy  E(v) = int 1/2 (1 + v^2) |grad v|^2


def _energy_operators(mesh: Mesh):
    """Sparse maps from nodal values to per-triangle x/y gradients and vertex sums."""
    if "energy_ops" not in mesh._cache:
        T, n = mesh.n_triangles, mesh.n_nodes
        rows = np.repeat(np.arange(T), 3)
        cols = mesh.triangles.ravel()
        G = mesh.gradients()
        C = sp.csr_matrix((np.ones(3 * T), (rows, cols)), shape=(T, n))
        Dx = sp.csr_matrix((G[:, :, 0].ravel(), (rows, cols)), shape=(T, n))
        Dy = sp.csr_matrix((G[:, :, 1].ravel(), (rows, cols)), shape=(T, n))
        mesh._cache["energy_ops"] = (C, Dx, Dy, C.T.tocsr(), Dx.T.tocsr(), Dy.T.tocsr())
    return mesh._cache["energy_ops"]


def _element_mask(mesh: Mesh, elements, batch: int):
    """(T, B) selection weights and the unbiasedness scale, or (None, 1) for all triangles.

    ``elements`` is None, a 1-D subset shared by all rows, or a (B, k) array of
    per-row subsets.
    """
    if elements is None:
        return None, 1.0
    e = np.asarray(elements, dtype=np.int64)
    if e.size == 0:
        raise ValueError("empty element subset")
    T = mesh.n_triangles
    if e.ndim == 1:
        e = np.unique(e)
        w = np.zeros((T, 1))
        w[e] = 1.0
        return w, T / len(e)
    if e.shape[0] != batch:
        raise ValueError("per-row element subsets must match the batch size")
    w = np.zeros((T, batch))
    w[e.T, np.arange(batch)[None, :]] = 1.0
    return w, T / e.shape[1]


def _element_terms(mesh: Mesh, Vt):
    C, Dx, Dy = _energy_operators(mesh)[:3]
    area = mesh.areas()[:, None]
    gx = Dx @ Vt
    gy = Dy @ Vt
    s = C @ Vt
    m = area / 12.0 * (C @ (Vt * Vt) + s * s)
    return gx, gy, s, gx * gx + gy * gy, m, area


def nonlinear_energy(mesh: Mesh, v, elements=None):
    """Energy of a field (or of each row of a batch).

    With an element subset the partial sum is scaled by ``n_triangles / k`` so
    that a uniformly random subset gives an unbiased estimate.
    """
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    Vt = v[:, None] if single else v.T
    w, scale = _element_mask(mesh, elements, Vt.shape[1])
    _, _, _, gsq, m, area = _element_terms(mesh, Vt)
    dens = gsq * (area + m)
    if w is not None:
        dens = dens * w
    E = 0.5 * scale * dens.sum(axis=0)
    return float(E[0]) if single else E


def nonlinear_energy_grad(mesh: Mesh, v, elements=None):
    """Exact gradient of :func:`nonlinear_energy` with respect to every nodal value."""
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    Vt = v[:, None] if single else v.T
    w, scale = _element_mask(mesh, elements, Vt.shape[1])
    gx, gy, s, gsq, m, area = _element_terms(mesh, Vt)
    a = area + m
    b = gsq * area / 12.0
    if w is not None:
        a = a * w
        b = b * w
    _, _, _, Ct, Dxt, Dyt = _energy_operators(mesh)
    out = Dxt @ (gx * a) + Dyt @ (gy * a) + Vt * (Ct @ b) + Ct @ (b * s)
    out *= scale
    return out[:, 0] if single else out.T


def nonlinear_energy_hessian(mesh: Mesh, v) -> sp.csr_matrix:
    v = np.asarray(v, dtype=float)
    e = np.arange(mesh.n_triangles)
    G = mesh.gradients()
    area = mesh.areas()
    ve = v[mesh.triangles]
    Ke = area[:, None, None] * np.einsum("eid,ejd->eij", G, G)
    Me = area[:, None, None] * _LOCAL_MASS
    Kv = np.einsum("eij,ej->ei", Ke, ve)
    Mv = np.einsum("eij,ej->ei", Me, ve)
    s = np.einsum("ei,ei->e", ve, Kv)
    m = np.einsum("ei,ei->e", ve, Mv)
    local = Ke * (1 + m / area)[:, None, None] \
        + (2 / area)[:, None, None] * (Kv[:, :, None] * Mv[:, None, :] + Mv[:, :, None] * Kv[:, None, :]) \
        + (s / area)[:, None, None] * Me
    return _assemble(mesh, e, local)


def harmonic_extension(mesh: Mesh, g, tol: float = 1e-12) -> np.ndarray:
    """Strong-Dirichlet discrete Laplace extension of boundary values ``g``."""
    K = assemble_stiffness(mesh)
    u = boundary_to_full(mesh, g)
    I = mesh.interior_nodes
    rhs = -(K[I][:, mesh.boundary_nodes] @ np.asarray(g, dtype=float))
    if np.any(rhs):
        u[I], _ = cg_solve(K[I][:, I], rhs, tol=tol)
    return u


def newton_solve_nonlinear(mesh: Mesh, g, tol: float = 1e-10, max_iter: int = 50,
                           max_halvings: int = 30) -> tuple[np.ndarray, int]:
    """Minimise the energy over interior dofs with boundary dofs fixed to ``g``.

    Damped Newton from the harmonic extension, backtracking by halving until
    the energy does not increase.  Returns ``(u, iterations)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite boundary data")
    I = mesh.interior_nodes
    u = harmonic_extension(mesh, g) if np.any(g) else boundary_to_full(mesh, g)
    E = nonlinear_energy(mesh, u)
    for it in range(max_iter + 1):
        r = nonlinear_energy_grad(mesh, u)[I]
        if np.linalg.norm(r) <= tol:
            return u, it
        if it == max_iter:
            break
        H = nonlinear_energy_hessian(mesh, u)[I][:, I].tocsr()
        try:
            d, _ = cg_solve(H, -r, tol=1e-12)
        except ConvergenceError:
            log.debug("Newton: CG failed on the Hessian, falling back to a direct solve")
            d = spla.spsolve(H.tocsc(), -r)
        if not np.all(np.isfinite(d)) or d @ r >= 0:
            d = -r
        step = 1.0
        for _ in range(max_halvings + 1):
            trial = u.copy()
            trial[I] += step * d
            E_trial = nonlinear_energy(mesh, trial)
            if E_trial <= E + 1e-14 * max(abs(E), 1.0):
                break
            step *= 0.5
        else:
            raise ConvergenceError(f"Newton line search failed at iteration {it}")
        u, E = trial, E_trial
    raise ConvergenceError(f"Newton did not reach |grad| <= {tol:g} in {max_iter} iterations "
                           f"(|grad| = {np.linalg.norm(r):.3e})")


def norms(mesh: Mesh, v, elements=None) -> dict:
    """Exact L2 norm and H1 seminorm of a P1 field over all or some triangles."""
    e = _elements(mesh, elements)
    v = np.asarray(v, dtype=float)
    ve = v[mesh.triangles[e]]
    area = mesh.areas()[e]
    l2sq = np.sum(area / 12.0 * (np.sum(ve * ve, axis=-1) + np.sum(ve, axis=-1) ** 2))
    grad = np.einsum("ek,ekd->ed", ve, mesh.gradients()[e])
    h1sq = np.sum(area * np.sum(grad * grad, axis=-1))
    return {"l2": float(np.sqrt(l2sq)), "h1_semi": float(np.sqrt(h1sq)),
            "h1": float(np.sqrt(l2sq + h1sq))}
