"""Acceptance criteria, run at their stated tolerances.

Each test records a PASS/FAIL line (see the terminal summary).  Two checks are
strict xfails because the stated target is not reached at the specified mesh
sizes and noise level; the measured values are printed with the FAIL line.
"""

import math

import numpy as np
import pytest

from latentuc.datagen import GAUSSIAN_CASES, sample_fourier_dataset, sample_parametric_dataset
from latentuc.fem import assemble_subdomain_mass, nonlinear_energy, nonlinear_energy_grad, norms
from latentuc.inverse import (build_reduced_basis, composed_fields, disc_stability_constant, latent_inverse_solve,
                              make_observation, rayleigh_min)
from latentuc.mesh import Disc, build_unit_square_mesh, subdomain_elements
from latentuc.neural import (Autoencoder, TrainConfig, autoencoder_loss_and_grads, mlp_backward, mlp_forward,
                             mlp_init,
                             pca_residual, train_autoencoder, validate_operator, zero_energy_check)
from latentuc.pod import fit_pod
from latentuc.studies import nitsche_convergence, projection_convergence, rayleigh_study

pytestmark = pytest.mark.slow
OMEGA = Disc((0.0, 0.0), 0.3)


def max_rel_fd(f, x, grad, step):
    worst = 0.0
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + step
        fp = f()
        x.flat[i] = old - step
        fm = f()
        x.flat[i] = old
        fd = (fp - fm) / (2 * step)
        worst = max(worst, abs(fd - grad.flat[i]) / max(abs(fd), abs(grad.flat[i]), 1e-8))
    return worst


# 1 ---------------------------------------------------------------------------

@pytest.mark.xfail(strict=True, reason="pre-asymptotic: the jump stabilizer bias dominates the H1 error for "
                   "n <= 80 (measured slope about 0.4); see the decisions ledger")
def test_c01_projection_converges_at_order_h(criterion):
    res = projection_convergence((10, 20, 40, 80), ref_n=160, n_modes=5, omega=OMEGA)
    slope = res.slopes["H1"]
    errs = ", ".join(f"{e:.3g}" for e in res.column("H1_relative"))
    assert criterion(1, "O(h) H1 convergence of the stabilized projection", 0.9 <= slope <= 1.5,
                     f"slope {slope:.3f}, relative errors {errs}")


# 2 ---------------------------------------------------------------------------

def test_c02_nitsche_basis_accuracy(criterion):
    res = nitsche_convergence((10, 20, 40), ref_n=160)
    l2, h1 = res.slopes["L2"], res.slopes["H1"]
    assert criterion(2, "Nitsche basis accuracy", 1.8 <= l2 <= 2.2 and 0.9 <= h1 <= 1.2,
                     f"L2 slope {l2:.3f}, H1 slope {h1:.3f}")


# 3 ---------------------------------------------------------------------------

def test_c03_pod_exact_rank(criterion):
    mesh = build_unit_square_mesh(82)
    ok, parts = True, []
    for N in (9, 21):
        s = np.linalg.svd(sample_fourier_dataset(mesh, N, 1000, 42).samples, compute_uv=False)
        ok &= s[N] / s[0] < 1e-10 and s[N - 1] / s[0] > 1e-6
        parts.append(f"N={N}: s_N/s_1 {s[N - 1] / s[0]:.2e}, s_N+1/s_1 {s[N] / s[0]:.2e}")
    assert criterion(3, "POD exact rank of Fourier data", ok, "; ".join(parts))


# 4 ---------------------------------------------------------------------------

def _gaussian_spectra(case):
    n_X, L = GAUSSIAN_CASES[case][:2]
    noisy = sample_parametric_dataset("gaussian", case, 1000, 0)
    clean = sample_parametric_dataset("gaussian", case, 1000, 0, noise_std=0.0)
    M, J = noisy.samples.shape
    # largest singular value of an M x J matrix of N(0, d^2) entries concentrates at d (sqrt M + sqrt J)
    edge = noisy.noise_std * (math.sqrt(M) + math.sqrt(J))
    return (n_X, L, M, J, np.linalg.svd(noisy.samples, compute_uv=False),
            np.linalg.svd(clean.samples, compute_uv=False), edge, clean.samples)


@pytest.mark.xfail(strict=True, reason="most bump coefficients are tiny, so the structured singular values sit "
                   "only 1.1..3.3 times above the noise edge; see the decisions ledger")
def test_c04_rank_law_above_three_noise_floors(criterion):
    counts, ok = [], True
    for case in ("2x5", "3x6", "3x7", "4x8"):
        n_X, L, M, J, s, _, edge, _ = _gaussian_spectra(case)
        k = int(np.sum(s > 3 * edge))
        counts.append(f"{case}: {k} vs lcm {math.lcm(n_X, L)}")
        ok &= k == math.lcm(n_X, L)
    assert criterion(4, "Gaussian rank law, count above 3x noise floor", ok, "; ".join(counts))


def test_c04_rank_law_structure(criterion):
    """Noise-free rank, noisy spectral gap at the noise edge, and the column-equality oracle."""
    ok, parts = True, []
    for case in ("2x5", "3x6", "3x7", "4x8"):
        n_X, L, M, J, s, sc, edge, clean = _gaussian_spectra(case)
        lcm = math.lcm(n_X, L)
        rank = int(np.sum(sc > np.finfo(float).eps * max(M, J) * sc[0]))
        distinct = len({(j % n_X, j % L) for j in range(J)})
        unique_cols = len({clean[:, j].tobytes() for j in range(J)})
        gap = s[lcm - 1] > edge and (lcm == J or s[lcm] < 1.1 * edge)
        ok &= rank == lcm == distinct == unique_cols and gap
        parts.append(f"{case}: rank {rank}, classes {unique_cols}, s_lcm/edge {s[lcm - 1] / edge:.2f}")
    assert criterion(4, "Gaussian rank law, noise-free rank and noise-edge gap", ok, "; ".join(parts))


# 5 ---------------------------------------------------------------------------

def test_c05_gradients(criterion):
    worst_fem = 0.0
    rng = np.random.default_rng(5)
    for n in (4, 10):
        mesh = build_unit_square_mesh(n)
        v = rng.standard_normal(mesh.n_nodes) * 0.5
        g = nonlinear_energy_grad(mesh, v)
        worst_fem = max(worst_fem, max_rel_fd(lambda: float(nonlinear_energy(mesh, v)), v, g, 1e-5))
    worst_net = 0.0
    net = mlp_init([4, 8, 8, 3], seed=1)
    x, c = rng.standard_normal((5, 4)), rng.standard_normal((5, 3))
    grads, _ = mlp_backward(net, x, c)
    for p, g in zip(net.params, grads):
        worst_net = max(worst_net, max_rel_fd(lambda: float(np.sum(c * mlp_forward(net, x))), p, g, 1e-5))
    ae = Autoencoder(mlp_init([6, 10, 2], seed=2, output_activation=True), mlp_init([2, 10, 6], seed=3))
    X = rng.standard_normal((8, 6))
    _, agrads = autoencoder_loss_and_grads(ae, X)
    for p, g in zip(ae.encoder.params + ae.decoder.params, agrads):
        worst_net = max(worst_net, max_rel_fd(lambda: autoencoder_loss_and_grads(ae, X)[0], p, g, 1e-5))
    assert criterion(5, "energy and backprop gradients vs finite differences", worst_fem < 1e-6 and worst_net < 1e-5,
                     f"FEM {worst_fem:.2e}, networks {worst_net:.2e}")


# 6, 7 ------------------------------------------------------------------------

def test_c06_zero_energy(criterion, desk):
    cfg = desk["config"]
    assert (desk["width"], cfg.batch_size, cfg.iterations) == (64, 32, 50_000)
    e0 = zero_energy_check(desk["net"], desk["mesh"], desk["pod"])
    assert criterion(6, "zero-input energy after desk training", e0 < 1e-3, f"E(u_g=0) = {e0:.3e}")


def test_c07_operator_validation(criterion, desk):
    res = validate_operator(desk["net"], desk["mesh"], desk["pod"], n_problems=100)
    ok = res["h1_rel"] < 0.05 and res["l2_rel"] < 0.02 and res["n_failed"] == 0
    assert criterion(7, "operator validation against Newton", ok,
                     f"H1 {100 * res['h1_rel']:.2f}%, L2 {100 * res['l2_rel']:.2f}%")


# 8 ---------------------------------------------------------------------------

def test_c08_autoencoder_latent_finding(criterion):
    X = sample_parametric_dataset("gaussian", "3x7", 1000, 0).samples
    _, mse, _ = train_autoencoder(X, 9)
    pca17 = pca_residual(X, 17)
    assert criterion(8, "latent width 9 matches PCA with 17 modes", mse <= 2 * pca17,
                     f"AE MSE {mse:.4g}, PCA-17 {pca17:.4g}, ratio {mse / pca17:.2f}")


# 9 ---------------------------------------------------------------------------

def test_c09_disc_stability_constants(criterion):
    worst = max(abs(disc_stability_constant(n, r) * r ** (n + 1) - 1.0)
                for n in range(21) for r in (0.3, 0.5, 0.8))
    assert criterion(9, "disc stability constants", worst < 1e-12, f"max deviation {worst:.1e}")


# 10 --------------------------------------------------------------------------

def test_c10_stabilization_monotonicity(criterion):
    res = rayleigh_study(mesh_n=10, num_coeffs=21, count=1000, seed=42, omega=OMEGA)
    lo, lm = res.column("lambda_min_omega"), res.column("lambda_min_mh")
    # trailing values reach 1e-20, below the eigensolver's resolution relative to the largest eigenvalue
    tol = 1e-13 * lm.max()
    nonincreasing = bool(np.all(np.diff(lo) <= tol))
    dominated = bool(np.all(lm >= lo - tol))
    mesh = build_unit_square_mesh(20)
    for omega in (Disc((0.1, -0.1), 0.25), Disc((0.0, 0.0), 0.45)):
        pod = fit_pod(sample_fourier_dataset(mesh, 9, 300, 1).samples, mesh_n=20)
        b = build_reduced_basis(mesh, pod, omega)
        dominated &= rayleigh_min(b, True) >= rayleigh_min(b, False)
    assert criterion(10, "stabilization monotonicity", nonincreasing and dominated,
                     f"lambda_min(omega) {lo[0]:.2e} -> {lo[-1]:.2e}; stabilized {lm[-1]:.2e}")


# 11 --------------------------------------------------------------------------

def test_c11_end_to_end_inverse_recovery(criterion, desk):
    mesh, pod, net = desk["mesh"], desk["pod"], desk["net"]
    # nine Gaussian-bump coefficients feeding the nine POD modes of the operator network
    ds = sample_parametric_dataset("gaussian", None, 1000, 7, n_X=3, L=9, x0=tuple(range(0, 18, 2)),
                                   x_range=(-2.0, 18.0), J=9)
    cfg = TrainConfig(batch_size=100, iterations=20_000, lr_initial=1e-3, lr_decay_every=5000, seed=0)
    ae, _, _ = train_autoencoder(ds.samples, 3, 64, cfg)
    elems = subdomain_elements(mesh, OMEGA)
    W = assemble_subdomain_mass(mesh, elems)
    ok, parts = True, []
    for row in range(3):
        z_star = ae.encode(ds.samples[row])
        u = composed_fields(net, pod, mesh, z_star, ae.decoder)[0]
        exact = latent_inverse_solve(net, pod, mesh, make_observation(mesh, OMEGA, u), z_star, ae.decoder,
                                     iterations=200)
        stays = max(exact.loss_trace) <= exact.loss_trace[0] + 1e-12 and exact.final_objective <= exact.loss_trace[0]
        obs = make_observation(mesh, OMEGA, u, noise_std=0.05, seed=row, relative=True)
        rec = latent_inverse_solve(net, pod, mesh, obs, np.zeros(3), ae.decoder)
        ratio = rec.final_objective / rec.loss_trace[0]
        # noise-induced floor: the data-norm fit of the noise, linearised about z*
        mask = np.zeros(mesh.n_nodes)
        mask[obs.node_indices] = 1.0
        eta = obs.full(mesh.n_nodes) - mask * u
        step = 1e-6
        Jz = np.column_stack([(composed_fields(net, pod, mesh, z_star + e, ae.decoder)[0]
                               - composed_fields(net, pod, mesh, z_star - e, ae.decoder)[0]) / (2 * step)
                              for e in np.eye(3) * step])
        dz = np.linalg.solve(Jz.T @ (W @ Jz), Jz.T @ (W @ eta))
        floor = norms(mesh, Jz @ dz, elems)["h1"]
        err = norms(mesh, rec.field - u, elems)["h1"]
        ok &= stays and ratio < 1e-2 and err < 5 * floor
        parts.append(f"row {row}: ratio {ratio:.1e}, err/floor {err / floor:.2f}")
    assert criterion(11, "end-to-end latent inverse recovery", ok, "; ".join(parts))
