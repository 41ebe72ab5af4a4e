import numpy as np
import pytest
from hypothesis import given, strategies as st

from latentuc.datagen import fourier_boundary
from latentuc.fem import (Field, assemble_boundary_mass, assemble_jump_penalty, assemble_nitsche,
                          assemble_stiffness, assemble_subdomain_mass, boundary_stab_pair, harmonic_extension,
                          newton_solve_nonlinear, nitsche_solve, nonlinear_energy, nonlinear_energy_grad,
                          nonlinear_energy_hessian, norms)
from latentuc.mesh import build_unit_square_mesh


def p1_gradient(points):
    """Gradients of the three barycentric functions of a triangle, from a 3x3 solve."""
    V = np.column_stack([np.ones(3), points])
    return np.linalg.solve(V, np.eye(3))[1:].T          # row k = grad of basis k


def tri_area(p):
    (ax, ay), (bx, by) = p[1] - p[0], p[2] - p[0]
    return 0.5 * abs(ax * by - ay * bx)


def central_fd(f, v, step=1e-5):
    g = np.empty_like(v)
    for i in range(len(v)):
        e = np.zeros_like(v)
        e[i] = step
        g[i] = (f(v + e) - f(v - e)) / (2 * step)
    return g


def rel_mismatch(a, b):
    return np.max(np.abs(a - b)) / np.max(np.abs(b))


# ---------------------------------------------------------------------------
# linear forms

def test_field_validation():
    Field(2, np.zeros(9))
    with pytest.raises(ValueError):
        Field(2, np.zeros(8))
    with pytest.raises(ValueError):
        Field(2, np.full(9, np.nan))


def test_stiffness_examples(mesh10):
    K = assemble_stiffness(mesh10)
    np.testing.assert_allclose(K @ np.ones(mesh10.n_nodes), 0, atol=1e-12)
    x = mesh10.nodes[:, 0]
    assert x @ K @ x == pytest.approx(1.0, abs=1e-12)
    assert abs(K - K.T).max() < 1e-14
    K2 = assemble_stiffness(build_unit_square_mesh(2))
    assert K2[4, 4] == pytest.approx(4.0)


def test_nitsche_form_entries():
    m = build_unit_square_mesh(2)
    forms = assemble_nitsche(m, beta=10.0)
    K = assemble_stiffness(m)
    # the centre node is interior: no boundary contribution
    assert forms.A[4, 4] == pytest.approx(K[4, 4])
    # bottom mid node (0, -0.5): stiffness 2, flux term 2 * 1/2, penalty (10 / 0.5) * (2h/3)
    assert forms.A[1, 1] == pytest.approx(2.0 - 1.0 + 20.0 / 3.0)
    m10 = build_unit_square_mesh(10)
    A = assemble_nitsche(m10).A
    assert abs(A - A.T).max() < 1e-12
    with pytest.raises(ValueError):
        assemble_nitsche(m10, beta=0.0)


def test_boundary_mass_total(mesh10):
    Mb = assemble_boundary_mass(mesh10)
    one = np.ones(mesh10.n_nodes)
    assert one @ Mb @ one == pytest.approx(4.0)
    x = mesh10.nodes[:, 0]
    # int x^2 over the boundary: two sides at x = +-1/2 (1/4 each) plus two sides with int x^2 = 1/12
    assert x @ Mb @ x == pytest.approx(0.5 + 1 / 6)


@pytest.mark.parametrize("beta", [5.0, 10.0, 50.0])
@pytest.mark.parametrize("n", [2, 7, 10])
def test_nitsche_reproduces_linears(n, beta):
    m = build_unit_square_mesh(n)
    forms = assemble_nitsche(m, beta)
    u = 0.3 + m.nodes[:, 0] + m.nodes[:, 1]
    sol = nitsche_solve(forms, m, u[m.boundary_nodes])
    assert np.max(np.abs(sol - u)) < 1e-10
    assert np.linalg.norm(forms.A @ u - forms.rhs(np.where(np.isin(np.arange(m.n_nodes), m.boundary_nodes), u, 0))) < 1e-10


def test_nitsche_zero_and_superposition(mesh10):
    forms = assemble_nitsche(mesh10)
    nb = len(mesh10.boundary_nodes)
    assert not nitsche_solve(forms, mesh10, np.zeros(nb)).any()
    rng = np.random.default_rng(3)
    g1 = fourier_boundary(mesh10, 5, rng.uniform(-1, 1, 5))
    g2 = fourier_boundary(mesh10, 5, rng.uniform(-1, 1, 5))
    lhs = nitsche_solve(forms, mesh10, 2.0 * g1 - 0.5 * g2)
    rhs = 2.0 * nitsche_solve(forms, mesh10, g1) - 0.5 * nitsche_solve(forms, mesh10, g2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_nitsche_rates():
    from latentuc.studies import nitsche_convergence
    res = nitsche_convergence((10, 20, 40), 160)
    assert 1.8 <= res.slopes["L2"] <= 2.2
    assert 0.9 <= res.slopes["H1"] <= 1.2


# ---------------------------------------------------------------------------
# jump penalty and boundary stabilizer

def brute_jump(mesh, v):
    """Face loop with per-triangle gradients recomputed from vertex coordinates."""
    total = 0.0
    for a, b, t1, t2 in mesh.interior_faces:
        pa, pb = mesh.nodes[a], mesh.nodes[b]
        tangent = (pb - pa) / np.linalg.norm(pb - pa)
        normal = np.array([tangent[1], -tangent[0]])
        grads = []
        for t in (t1, t2):
            tri = mesh.triangles[t]
            grads.append(v[tri] @ p1_gradient(mesh.nodes[tri]))
        jump = (grads[0] - grads[1]) @ normal
        total += mesh.h * np.linalg.norm(pb - pa) * jump ** 2
    return total


def test_jump_penalty_examples(mesh4):
    S = assemble_jump_penalty(mesh4)
    lin = 1.0 - 2.0 * mesh4.nodes[:, 0] + 0.7 * mesh4.nodes[:, 1]
    assert abs(lin @ S @ lin) < 1e-12
    hat = np.zeros(mesh4.n_nodes)
    hat[12] = 1.0                                         # the centre node
    assert hat @ S @ hat == pytest.approx(brute_jump(mesh4, hat), rel=1e-12)
    rng = np.random.default_rng(7)
    v = rng.standard_normal(mesh4.n_nodes)
    assert v @ S @ v == pytest.approx(brute_jump(mesh4, v), rel=1e-12)
    quad = [rng.standard_normal(mesh4.n_nodes) for _ in range(100)]
    assert min(q @ S @ q for q in quad) >= -1e-12


def test_jump_penalty_of_x_squared():
    # P1 interpolant of x^2: gradient jumps of 2h across vertical faces only
    for n in (6, 10):
        m = build_unit_square_mesh(n)
        u = m.nodes[:, 0] ** 2
        assert u @ assemble_jump_penalty(m) @ u == pytest.approx(4 * m.h ** 2 * (1 - m.h), rel=1e-12)


def test_boundary_stab(mesh10):
    nb = len(mesh10.boundary_nodes)
    assert boundary_stab_pair(mesh10, np.zeros(nb), np.zeros(nb)) == 0.0
    c = 0.3
    assert boundary_stab_pair(mesh10, np.full(nb, c), np.full(nb, c)) == pytest.approx(4 * c * c / mesh10.h)
    saw = (-1.0) ** np.arange(nb)
    h = mesh10.h
    # per edge: mass part h^-1 * h/3 (a^2 + ab + b^2) = 1/3, tangential part h * (2/h)^2 * h = 4
    val = boundary_stab_pair(mesh10, saw, saw)
    assert val == pytest.approx(nb * (1 / 3 + 4.0))
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, nb))
    assert boundary_stab_pair(mesh10, a, b) == pytest.approx(boundary_stab_pair(mesh10, b, a))
    with pytest.raises(ValueError):
        boundary_stab_pair(mesh10, a[:-1], b[:-1])
    del h


def test_subdomain_mass(mesh10):
    one = np.ones(mesh10.n_nodes)
    assert one @ assemble_subdomain_mass(mesh10) @ one == pytest.approx(1.0)
    half = np.arange(0, mesh10.n_triangles, 2)
    assert one @ assemble_subdomain_mass(mesh10, half) @ one == pytest.approx(0.5)
    x = mesh10.nodes[:, 0]
    assert x @ assemble_subdomain_mass(mesh10) @ x == pytest.approx(1 / 12)
    with pytest.raises(ValueError):
        assemble_subdomain_mass(mesh10, [])


# ---------------------------------------------------------------------------
# nonlinear energy

def brute_energy(mesh, v):
    """Edge-midpoint rule (exact for quadratics) for 1/2 (1 + v^2) |grad v|^2 per triangle."""
    total = 0.0
    for tri in mesh.triangles:
        p = mesh.nodes[tri]
        g = v[tri] @ p1_gradient(p)
        area = tri_area(p)
        mids = [(v[tri[i]] + v[tri[j]]) / 2 for i, j in ((0, 1), (1, 2), (2, 0))]
        total += area / 3 * sum(0.5 * (1 + w * w) * (g @ g) for w in mids)
    return total


def test_energy_examples(mesh10):
    assert nonlinear_energy(mesh10, np.zeros(mesh10.n_nodes)) == 0.0
    assert nonlinear_energy(mesh10, np.full(mesh10.n_nodes, 2.5)) == pytest.approx(0.0, abs=1e-12)
    assert nonlinear_energy(mesh10, mesh10.nodes[:, 0]) == pytest.approx(13 / 24, abs=1e-13)


def test_energy_matches_quadrature_oracle(mesh4):
    v = np.random.default_rng(11).standard_normal(mesh4.n_nodes)
    assert nonlinear_energy(mesh4, v) == pytest.approx(brute_energy(mesh4, v), rel=1e-12)


@pytest.mark.parametrize("n", [4, 10])
@pytest.mark.parametrize("subset", [False, True])
def test_energy_gradient_fd(n, subset):
    m = build_unit_square_mesh(n)
    rng = np.random.default_rng(n)
    v = rng.standard_normal(m.n_nodes)
    elems = rng.choice(m.n_triangles, m.n_triangles // 3, replace=False) if subset else None
    g = nonlinear_energy_grad(m, v, elems)
    fd = central_fd(lambda w: nonlinear_energy(m, w, elems), v)
    assert rel_mismatch(g, fd) < 1e-6


def test_energy_gradient_zero_and_locality(mesh10):
    assert not nonlinear_energy_grad(mesh10, np.zeros(mesh10.n_nodes)).any()
    elems = np.array([3, 40, 41, 99, 150])
    v = np.random.default_rng(5).standard_normal(mesh10.n_nodes)
    g = nonlinear_energy_grad(mesh10, v, elems)
    outside = np.setdiff1d(np.arange(mesh10.n_nodes), mesh10.triangles[elems].ravel())
    assert not g[outside].any()
    # unbiased scaling: T/k times the plain partial sum
    partial = nonlinear_energy(mesh10, v, elems)
    assert partial * 5 / 200 == pytest.approx(sum(nonlinear_energy(mesh10, v, [e]) / 200 for e in elems))
    with pytest.raises(ValueError):
        nonlinear_energy(mesh10, v, [])


def test_energy_batch_consistency(mesh4):
    rng = np.random.default_rng(2)
    V = rng.standard_normal((3, mesh4.n_nodes))
    E = nonlinear_energy(mesh4, V)
    G = nonlinear_energy_grad(mesh4, V)
    for i in range(3):
        assert E[i] == pytest.approx(nonlinear_energy(mesh4, V[i]), rel=1e-14)
        np.testing.assert_allclose(G[i], nonlinear_energy_grad(mesh4, V[i]), rtol=1e-13, atol=1e-15)
    # per-row subsets
    sub = np.array([rng.choice(mesh4.n_triangles, 6, replace=False) for _ in range(3)])
    E = nonlinear_energy(mesh4, V, sub)
    for i in range(3):
        assert E[i] == pytest.approx(nonlinear_energy(mesh4, V[i], sub[i]), rel=1e-13)


def test_energy_hessian_fd(mesh4):
    v = np.random.default_rng(9).standard_normal(mesh4.n_nodes)
    H = nonlinear_energy_hessian(mesh4, v).toarray()
    fd = np.column_stack([central_fd(lambda w: nonlinear_energy_grad(mesh4, w)[i], v) for i in range(mesh4.n_nodes)])
    assert rel_mismatch(H, fd) < 1e-6


# ---------------------------------------------------------------------------
# Newton oracle

def test_newton_trivial_cases(mesh10):
    nb = len(mesh10.boundary_nodes)
    u, its = newton_solve_nonlinear(mesh10, np.zeros(nb))
    assert its == 0 and not u.any()
    u, _ = newton_solve_nonlinear(mesh10, np.full(nb, 0.7))
    np.testing.assert_allclose(u, 0.7, atol=1e-12)
    with pytest.raises(ValueError):
        newton_solve_nonlinear(mesh10, np.full(nb, np.inf))


def test_newton_optimality(mesh10):
    g = fourier_boundary(mesh10, 9, 0.3 * np.random.default_rng(4).uniform(-1, 1, 9))
    u, _ = newton_solve_nonlinear(mesh10, g, tol=1e-10)
    I = mesh10.interior_nodes
    assert np.linalg.norm(nonlinear_energy_grad(mesh10, u)[I]) < 1e-10
    E = nonlinear_energy(mesh10, u)
    assert E < nonlinear_energy(mesh10, harmonic_extension(mesh10, g))
    rng = np.random.default_rng(8)
    for _ in range(20):
        w = u.copy()
        w[I] += 1e-3 * rng.standard_normal(len(I))
        assert nonlinear_energy(mesh10, w) > E + 1e-12


# ---------------------------------------------------------------------------
# norms

def test_norms(mesh10):
    r = norms(mesh10, np.ones(mesh10.n_nodes))
    assert r["l2"] == pytest.approx(1.0) and r["h1_semi"] == pytest.approx(0.0, abs=1e-14)
    r = norms(mesh10, mesh10.nodes[:, 0])
    assert r["l2"] == pytest.approx(np.sqrt(1 / 12)) and r["h1_semi"] == pytest.approx(1.0)


def test_norms_random_against_quadrature(mesh4):
    v = np.random.default_rng(12).standard_normal(mesh4.n_nodes)
    l2 = h1 = 0.0
    for tri in mesh4.triangles:
        p = mesh4.nodes[tri]
        area = tri_area(p)
        mids = [(v[tri[i]] + v[tri[j]]) / 2 for i, j in ((0, 1), (1, 2), (2, 0))]
        l2 += area / 3 * sum(w * w for w in mids)
        g = v[tri] @ p1_gradient(p)
        h1 += area * g @ g
    r = norms(mesh4, v)
    assert r["l2"] == pytest.approx(np.sqrt(l2), rel=1e-12)
    assert r["h1_semi"] == pytest.approx(np.sqrt(h1), rel=1e-12)


@given(st.integers(2, 12), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_linear_fields_have_no_jumps(n, c0, cx, cy):
    m = build_unit_square_mesh(n)
    v = c0 + cx * m.nodes[:, 0] + cy * m.nodes[:, 1]
    assert abs(v @ assemble_jump_penalty(m) @ v) < 1e-11
