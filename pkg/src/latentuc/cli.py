"""Command-line entry point: ``latentuc <command> [options]``.

Every command writes its primary output (JSON or CSV), a ``.manifest.json``
with parameters, seeds, input/output hashes and timing, and, unless
``--no-plot`` is given, a PNG figure next to the primary output.  Relative
output paths are resolved against ``--outdir`` (default: ``$LATENTUC_OUTDIR``
or the working directory).

Exit status: 0 success, 1 usage or input-file error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import artifacts as io
from . import plotting
from .datagen import GAUSSIAN_CASES, POLYNOMIAL_CASES, sample_fourier_dataset, sample_parametric_dataset
from .inverse import (build_reduced_basis, disc_stability_constant, latent_inverse_solve, linear_superposition_solve,
                      make_observation, rayleigh_min)
from .linalg import ConvergenceError, SingularMatrixError
from .mesh import Disc, build_unit_square_mesh
from .neural import (TrainConfig, TrainingDivergence, mlp_forward, operator_fields, operator_preset, pca_residual,
                     train_autoencoder, train_operator, validate_operator, zero_energy_check)
from .pod import fit_pod, significant_count
from .studies import DEFAULT_OMEGA, nitsche_convergence, projection_convergence, rayleigh_study

log = logging.getLogger("latentuc")

OUTDIR_ENV = "LATENTUC_OUTDIR"
NUMERICAL_ERRORS = (ConvergenceError, SingularMatrixError, TrainingDivergence, FloatingPointError,
                    np.linalg.LinAlgError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _ints(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _disc(text: str) -> Disc:
    vals = _floats(text)
    if len(vals) != 3 or vals[2] <= 0:
        raise argparse.ArgumentTypeError("omega must be 'cx,cy,r' with r > 0")
    return Disc((vals[0], vals[1]), vals[2])


def _resolve(args, path) -> Path:
    path = Path(path)
    return path if path.is_absolute() else Path(args.outdir) / path


def _manifest(args, **seeds) -> io.RunManifest:
    params = {k: (v.to_dict() if isinstance(v, Disc) else v) for k, v in vars(args).items()
              if k not in ("func",)}
    return io.RunManifest(command=args.command, params=params, seeds={k: v for k, v in seeds.items() if v is not None})


def _finish(args, man: io.RunManifest, primary: Path, extra_outputs=(), figure=None):
    for p in (primary, *extra_outputs):
        man.add_output(p)
    if figure is not None and not args.no_plot:
        fig = figure(plotting.figure_path(primary))
        man.add_output(fig)
    man.finish(primary)
    log.info("wrote %s", primary)


def _input(man, path) -> Path:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"input file {path} does not exist")
    man.add_input(path)
    return path


def _pod_for(man, path, mesh_n=None):
    pod = io.load_pod(_input(man, path))
    if pod.mesh_n is None:
        raise UsageError(f"{path} does not record a mesh size")
    if mesh_n is not None and pod.mesh_n != mesh_n:
        raise UsageError(f"mesh mismatch: POD basis is {pod.mesh_n}x{pod.mesh_n}, model/observation is {mesh_n}x{mesh_n}")
    return pod


def _model_for(man, path, pod):
    net, training = io.load_model(_input(man, path))
    mesh_n = training.get("mesh_n")
    if mesh_n is not None and mesh_n != pod.mesh_n:
        raise UsageError(f"mesh mismatch: model was trained on {mesh_n}x{mesh_n}, POD basis is {pod.mesh_n}x{pod.mesh_n}")
    if net.layer_dims[0] != pod.n_modes_kept:
        raise UsageError(f"model expects {net.layer_dims[0]} coefficients, POD basis has {pod.n_modes_kept}")
    return net, training


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args):
    man = _manifest(args, seed=args.seed)
    out = _resolve(args, args.out)
    if args.kind == "fourier":
        if args.mesh_n is None:
            raise UsageError("--mesh-n is required for fourier data")
        noise = 0.15 if args.noise_std is None else args.noise_std
        ds = sample_fourier_dataset(build_unit_square_mesh(args.mesh_n), args.num_coeffs, args.count, args.seed,
                                    noise_std=noise)
    else:
        params = {}
        if args.noise_std is not None:
            params["noise_std"] = args.noise_std
        if args.gamma is not None:
            params["gamma"] = args.gamma
        if args.kind == "polynomial" and args.num_coeffs is not None:
            params["J"] = args.num_coeffs
        ds = sample_parametric_dataset(args.kind, args.case, args.count, args.seed, **params)
    js, csv_path = io.save_dataset(out, ds)

    def fig(path):
        k = min(5, ds.count)
        x = np.arange(ds.samples.shape[1])
        return plotting.plot_series(path, x, {f"sample {i}": ds.samples[i] for i in range(k)},
                                    "boundary node" if ds.kind == "fourier" else "coefficient", "value",
                                    title=f"{ds.kind} data", marker=".")

    _finish(args, man, js, [csv_path], fig)


def cmd_pod_fit(args):
    man = _manifest(args)
    ds = io.load_dataset(_input(man, args.data))
    n_keep = "auto" if args.n_keep == "auto" else int(args.n_keep)
    pod = fit_pod(ds.samples, n_keep, rel_tol=args.rel_tol, center=args.center, method=args.method,
                  mesh_n=ds.mesh_n)
    out = _resolve(args, args.out)
    io.save_pod(out, pod, {"data": str(args.data), "data_sha256": man.inputs[str(Path(args.data))]})
    man.results = {"N": pod.n_modes_kept}
    _finish(args, man, out, figure=lambda p: plotting.plot_spectrum(p, np.sqrt(pod.spectrum), "POD spectrum"))


def cmd_pod_spectrum(args):
    man = _manifest(args)
    ds = io.load_dataset(_input(man, args.data))
    s = np.linalg.svd(ds.samples, compute_uv=False)
    rows = [[i + 1, s[i], s[i] / s[0], s[i] ** 2] for i in range(len(s))]
    out = io.write_csv(_resolve(args, args.out), ["index", "sigma", "sigma_rel", "eigenvalue"], rows)
    man.results = {"significant": significant_count(s, args.rel_tol), "rel_tol": args.rel_tol}
    print(f"significant singular values (> {args.rel_tol:g} sigma_1): {man.results['significant']}")
    _finish(args, man, out, figure=lambda p: plotting.plot_spectrum(p, s, "singular values", s[0] * args.rel_tol))


def cmd_train_ae(args):
    man = _manifest(args, seed=args.seed)
    ds = io.load_dataset(_input(man, args.data))
    cfg = TrainConfig(batch_size=args.batch, iterations=args.iterations, lr_initial=args.lr,
                      lr_decay_every=max(1, args.iterations // 4), seed=args.seed,
                      log_every=max(1, args.iterations // 100))
    ae, mse, hist = train_autoencoder(ds.samples, args.latent, args.hidden, cfg)
    out = _resolve(args, args.out)
    training = {"config": cfg.to_dict(), "data_sha256": man.inputs[str(Path(args.data))], "mse": mse}
    io.save_autoencoder(out, ae, training)
    hist_path = io.write_csv(out.with_name(out.stem + "_history.csv"), ["iteration", "loss"], hist)
    man.results = {"mse": mse, f"pca_{args.latent}": pca_residual(ds.samples, args.latent)}
    print(f"autoencoder MSE {mse:.6g}  (PCA-{args.latent} residual {man.results[f'pca_{args.latent}']:.6g})")
    _finish(args, man, out, [hist_path], lambda p: plotting.plot_series(
        p, [h[0] for h in hist], {"loss": [h[1] for h in hist]}, "iteration", "MSE", logy=True, marker=None))


def cmd_train_op(args):
    man = _manifest(args, seed=args.seed)
    pod = _pod_for(man, args.pod)
    mesh = build_unit_square_mesh(pod.mesh_n)
    width, cfg = operator_preset(args.preset, pod.mesh_n, pod.n_modes_kept, args.seed)
    overrides = {"iterations": args.iterations, "batch_size": args.batch, "lr_initial": args.lr,
                 "element_subsample": args.element_subsample}
    d = cfg.to_dict()
    d.update({k: v for k, v in overrides.items() if v is not None})
    if args.iterations is not None and args.preset == "desk":
        d["lr_decay_every"] = max(1, args.iterations // 4)
    d["log_every"] = max(1, d["iterations"] // 100)
    cfg = TrainConfig(**d)
    width = args.width or width
    net, hist = train_operator(mesh, pod, width, cfg)
    e0 = zero_energy_check(net, mesh, pod)
    out = _resolve(args, args.out)
    training = {"config": cfg.to_dict(), "preset": args.preset, "width": width, "mesh_n": pod.mesh_n,
                "pod_sha256": man.inputs[str(Path(args.pod))], "zero_energy": e0}
    io.save_model(out, net, training)
    hist_path = io.write_csv(out.with_name(out.stem + "_history.csv"), ["iteration", "energy"], hist)
    man.results = {"zero_energy": e0, "final_energy": hist[-1][1]}
    print(f"zero-input energy {e0:.6g}")
    _finish(args, man, out, [hist_path], lambda p: plotting.plot_series(
        p, [h[0] for h in hist], {"energy": [h[1] for h in hist]}, "iteration", "batch mean energy",
        logy=True, marker=None))


def cmd_validate_op(args):
    man = _manifest(args, seed=args.seed)
    pod = _pod_for(man, args.pod)
    net, training = _model_for(man, args.model, pod)
    mesh = build_unit_square_mesh(pod.mesh_n)
    res = validate_operator(net, mesh, pod, args.problems, seed=args.seed, coeff_std=args.coeff_std)
    res = {k: float(v) if isinstance(v, np.floating) else v for k, v in res.items()}
    out = io.write_json(_resolve(args, args.out), res)
    man.results = res
    print("  ".join(f"{k} {v:.6g}" for k, v in res.items()))
    _finish(args, man, out)


def cmd_zero_energy(args):
    man = _manifest(args)
    pod = _pod_for(man, args.pod)
    net, _ = _model_for(man, args.model, pod)
    mesh = build_unit_square_mesh(pod.mesh_n)
    e0 = zero_energy_check(net, mesh, pod)
    out = io.write_json(_resolve(args, args.out), {"zero_energy": e0})
    man.results = {"zero_energy": e0}
    print(f"E(u_(g=0)) = {e0:.6g}")
    V = operator_fields(net, pod, mesh, np.zeros(pod.n_modes_kept))[0]
    _finish(args, man, out, figure=lambda p: plotting.plot_field(p, mesh, V, title="network output, zero input"))


def cmd_make_obs(args):
    man = _manifest(args, seed=args.seed)
    pod = _pod_for(man, args.pod)
    mesh = build_unit_square_mesh(pod.mesh_n)
    if args.latent is not None:
        if args.decoder is None or args.model is None:
            raise UsageError("--latent needs --decoder and --model")
        ae, _ = io.load_autoencoder(_input(man, args.decoder))
        coeffs = mlp_forward(ae.decoder, np.asarray(args.latent))
    elif args.coeffs is not None:
        coeffs = np.asarray(args.coeffs)
    else:
        raise UsageError("give --coeffs or --latent")
    if len(coeffs) != pod.n_modes_kept:
        raise UsageError(f"{len(coeffs)} coefficients for a {pod.n_modes_kept}-mode basis")
    if args.model is not None:
        net, _ = _model_for(man, args.model, pod)
        u = operator_fields(net, pod, mesh, coeffs)[0]
        source = "operator network"
    else:
        u = build_reduced_basis(mesh, pod, args.omega, threads=args.threads).field_of(coeffs)
        source = "nitsche reduced basis"
    obs = make_observation(mesh, args.omega, u, args.noise_std, args.seed, relative=args.relative,
                           provenance={"source": source, "coefficients": coeffs.tolist(),
                                       "latent": args.latent})
    out = io.save_observation(_resolve(args, args.out), obs)
    man.results = {"noise_std": obs.noise_std, "n_nodes": len(obs.node_indices)}
    _finish(args, man, out, figure=lambda p: plotting.plot_field(p, mesh, u, args.omega, title="true field"))


def cmd_solve_inverse(args):
    man = _manifest(args)
    obs = io.load_observation(_input(man, args.obs))
    pod = _pod_for(man, args.pod, obs.mesh_n)
    net, _ = _model_for(man, args.model, pod)
    mesh = build_unit_square_mesh(pod.mesh_n)
    decoder = None
    if args.decoder is not None:
        decoder = io.load_autoencoder(_input(man, args.decoder))[0].decoder
    dim = decoder.layer_dims[0] if decoder is not None else pod.n_modes_kept
    z0 = np.zeros(dim) if args.z0 is None else np.asarray(args.z0)
    if z0.shape != (dim,):
        raise UsageError(f"--z0 needs {dim} entries")
    log.info("latent solve with %s data norm", args.norm)
    res = latent_inverse_solve(net, pod, mesh, obs, z0, decoder, lr=args.lr, iterations=args.iterations,
                               norm=args.norm)
    out = io.save_result(_resolve(args, args.out), res)
    trace = io.write_csv(out.with_name(out.stem + "_trace.csv"), ["iteration", "objective"], enumerate(res.loss_trace))
    man.results = {"initial_objective": res.loss_trace[0], "final_objective": res.final_objective}
    print(f"objective {res.loss_trace[0]:.6g} -> {res.final_objective:.6g}")
    _finish(args, man, out, [trace], lambda p: plotting.plot_field(p, mesh, res.field, obs.omega, "reconstruction"))


def cmd_solve_linear(args):
    man = _manifest(args)
    obs = io.load_observation(_input(man, args.obs))
    pod = _pod_for(man, args.pod)
    mesh = build_unit_square_mesh(pod.mesh_n)
    basis = build_reduced_basis(mesh, pod, obs.omega, args.beta, threads=args.threads)
    stab = args.stabilized == "on"
    res = linear_superposition_solve(basis, obs, mesh, stabilized=stab)
    res.extra["lambda_min"] = rayleigh_min(basis, stab)
    out = io.save_result(_resolve(args, args.out), res)
    man.results = {"final_objective": res.final_objective, "lambda_min": res.extra["lambda_min"]}
    print(f"objective {res.final_objective:.6g}  lambda_min {res.extra['lambda_min']:.6g}")
    _finish(args, man, out, figure=lambda p: plotting.plot_field(p, mesh, res.field, obs.omega,
                                                                 f"stabilized {args.stabilized}"))


def cmd_convergence_study(args):
    man = _manifest(args)
    if args.nitsche:
        res = nitsche_convergence(args.meshes, args.ref_mesh, args.beta)
    else:
        res = projection_convergence(args.meshes, args.ref_mesh, args.modes, args.omega, beta=args.beta)
    out = io.write_csv(_resolve(args, args.out), res.columns, res.rows)
    man.results = {"slopes": res.slopes, **res.extra}
    print("  ".join(f"{k} slope {v:.4f}" for k, v in res.slopes.items()))
    errs = {c: res.column(c) for c in res.columns if c.endswith("_error")}
    _finish(args, man, out, figure=lambda p: plotting.plot_convergence(p, res.column("h"), errs))


def cmd_rayleigh_study(args):
    man = _manifest(args, seed=args.seed)
    res = rayleigh_study(args.mesh_n, args.num_coeffs, args.count, args.seed, args.noise_std, args.omega, args.beta)
    out = io.write_csv(_resolve(args, args.out), res.columns, res.rows)
    man.results = res.extra
    _finish(args, man, out, figure=lambda p: plotting.plot_series(
        p, res.column("N"), {"L2(omega)": np.abs(res.column("lambda_min_omega")),
                             "stabilized": res.column("lambda_min_mh")}, "N", "smallest eigenvalue", logy=True))


def cmd_disc_stability(args):
    man = _manifest(args)
    if not 0 < args.r_omega <= 1:
        raise UsageError("--r-omega must lie in (0, 1]")
    rows = [[n, disc_stability_constant(n, args.r_omega)] for n in range(args.n_max + 1)]
    out = io.write_csv(_resolve(args, args.out), ["n", "C_n"], rows)
    _finish(args, man, out, figure=lambda p: plotting.plot_series(
        p, [r[0] for r in rows], {"C_n": [r[1] for r in rows]}, "n", "stability constant", logy=True))


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="latentuc", description=__doc__.splitlines()[0])
    p.add_argument("--outdir", default=os.environ.get(OUTDIR_ENV, "."),
                   help=f"directory for relative output paths (default ${OUTDIR_ENV} or .)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for basis solves (1 = reproducible mode)")
    p.add_argument("--no-plot", action="store_true", help="skip the PNG figures")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(func=func)
        return sp

    sp = add("gen-data", cmd_gen_data, "sample a Fourier or parametric dataset")
    sp.add_argument("--kind", choices=["fourier", "polynomial", "gaussian"], required=True)
    sp.add_argument("--num-coeffs", type=int)
    sp.add_argument("--count", type=int, default=1000)
    sp.add_argument("--mesh-n", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--noise-std", type=float)
    sp.add_argument("--case", choices=sorted(GAUSSIAN_CASES) + list(POLYNOMIAL_CASES))
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--out", required=True)

    sp = add("pod-fit", cmd_pod_fit, "fit a POD basis to boundary snapshots")
    sp.add_argument("--data", required=True)
    sp.add_argument("--n-keep", default="auto")
    sp.add_argument("--rel-tol", type=float, default=1e-8, help="eigenvalue cut relative to the largest (auto mode)")
    sp.add_argument("--method", choices=["svd", "gram"], default="svd")
    sp.add_argument("--center", action="store_true", help="subtract the mean row first (off by default)")
    sp.add_argument("--out", required=True)

    sp = add("pod-spectrum", cmd_pod_spectrum, "singular values of a dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--rel-tol", type=float, default=1e-10)
    sp.add_argument("--out", required=True)

    sp = add("train-ae", cmd_train_ae, "train an autoencoder on coefficient rows")
    sp.add_argument("--data", required=True)
    sp.add_argument("--latent", type=int, required=True)
    sp.add_argument("--hidden", type=int, default=64)
    sp.add_argument("--iterations", type=int, default=40_000)
    sp.add_argument("--batch", type=int, default=100)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("train-op", cmd_train_op, "train the operator network on the energy")
    sp.add_argument("--pod", required=True)
    sp.add_argument("--preset", choices=["desk", "full"], default="desk")
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--width", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--element-subsample", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("validate-op", cmd_validate_op, "compare the network with Newton solutions")
    sp.add_argument("--model", required=True)
    sp.add_argument("--pod", required=True)
    sp.add_argument("--problems", type=int, default=1000)
    sp.add_argument("--coeff-std", type=float, default=0.3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("zero-energy", cmd_zero_energy, "energy of the network field for zero boundary data")
    sp.add_argument("--model", required=True)
    sp.add_argument("--pod", required=True)
    sp.add_argument("--out", required=True)

    sp = add("make-obs", cmd_make_obs, "synthesise an observation on omega")
    sp.add_argument("--pod", required=True)
    sp.add_argument("--model", help="use the operator network (nonlinear); default is the Nitsche basis (linear)")
    sp.add_argument("--decoder", help="autoencoder file, needed with --latent")
    sp.add_argument("--coeffs", type=_floats)
    sp.add_argument("--latent", type=_floats)
    sp.add_argument("--omega", type=_disc, default=DEFAULT_OMEGA, help="cx,cy,r")
    sp.add_argument("--noise-std", type=float, default=0.0)
    sp.add_argument("--relative", action="store_true", help="noise std is a fraction of the RMS signal")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("solve-inverse", cmd_solve_inverse, "latent or coefficient-space reconstruction through the network")
    sp.add_argument("--model", required=True)
    sp.add_argument("--pod", required=True)
    sp.add_argument("--obs", required=True)
    sp.add_argument("--decoder", help="autoencoder file; optimise over its latent space")
    sp.add_argument("--z0", type=_floats)
    sp.add_argument("--lr", type=float, default=1e-2)
    sp.add_argument("--iterations", type=int, default=2000)
    sp.add_argument("--norm", choices=["L2", "H1"], default="L2")
    sp.add_argument("--out", required=True)

    sp = add("solve-linear", cmd_solve_linear, "projection onto the Nitsche reduced basis")
    sp.add_argument("--pod", required=True)
    sp.add_argument("--obs", required=True)
    sp.add_argument("--stabilized", choices=["on", "off"], default="on")
    sp.add_argument("--beta", type=float, default=10.0)
    sp.add_argument("--out", required=True)

    sp = add("convergence-study", cmd_convergence_study, "mesh convergence of the stabilized projection")
    sp.add_argument("--modes", type=int, default=5)
    sp.add_argument("--meshes", type=_ints, default=[10, 20, 40, 80])
    sp.add_argument("--ref-mesh", type=int, default=160)
    sp.add_argument("--omega", type=_disc, default=DEFAULT_OMEGA)
    sp.add_argument("--beta", type=float, default=10.0)
    sp.add_argument("--nitsche", action="store_true", help="study the Nitsche solve of x^2 - y^2 instead")
    sp.add_argument("--out", required=True)

    sp = add("rayleigh-study", cmd_rayleigh_study, "smallest Gram eigenvalues for nested POD bases")
    sp.add_argument("--mesh-n", type=int, default=10)
    sp.add_argument("--num-coeffs", type=int, default=21)
    sp.add_argument("--count", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--noise-std", type=float, default=0.15)
    sp.add_argument("--omega", type=_disc, default=DEFAULT_OMEGA)
    sp.add_argument("--beta", type=float, default=10.0)
    sp.add_argument("--out", required=True)

    sp = add("disc-stability", cmd_disc_stability, "analytic stability constants on the unit disc")
    sp.add_argument("--n-max", type=int, default=10)
    sp.add_argument("--r-omega", type=float, required=True)
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("no command given")
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"latentuc {args.command}: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as exc:
        print(f"latentuc {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"latentuc {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
