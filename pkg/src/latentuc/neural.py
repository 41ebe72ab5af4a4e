"""Numpy multilayer perceptrons, Adam, and the two training problems.

Networks act on row batches: ``y = elu(x @ W.T + b)`` per layer, with the
last layer affine unless ``output_activation`` is set.  The operator network
maps POD coefficients to the interior nodal values of a P1 field; boundary
values always come from decoding the same coefficients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .fem import newton_solve_nonlinear, nonlinear_energy, nonlinear_energy_grad, norms
from .linalg import ConvergenceError
from .mesh import Mesh
from .pod import PodBasis, pod_decode
from .rng import Rng

log = logging.getLogger(__name__)

# mesh_n -> (hidden width, batch size) for the operator network
FULL_ARCHITECTURES = {10: (64, 32), 28: (256, 64), 82: (512, 64), 244: (1024, 96)}
# element subsampling used on the finest mesh, keyed by number of coefficients
FINE_MESH_ELEMENTS = {9: 3000, 21: 4000}
N_HIDDEN = 4


class TrainingDivergence(RuntimeError):
    def __init__(self, iteration: int, what: str = "loss"):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


@dataclass
class Mlp:
    layer_dims: list
    weights: list
    biases: list
    activation: str = "elu"
    output_activation: bool = False

    def __post_init__(self):
        dims = list(self.layer_dims)
        if len(dims) < 2 or len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError(f"inconsistent layer dims {dims}")
        for W, b, i, o in zip(self.weights, self.biases, dims[:-1], dims[1:]):
            if W.shape != (o, i) or b.shape != (o,):
                raise ValueError(f"layer shapes {W.shape}/{b.shape} do not chain for dims {dims}")

    @property
    def params(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "Mlp":
        return Mlp(list(self.layer_dims), [W.copy() for W in self.weights], [b.copy() for b in self.biases],
                   self.activation, self.output_activation)

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(map(int, self.layer_dims)),
            "activation": self.activation,
            "output_activation": self.output_activation,
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        return cls(
            layer_dims=list(d["layer_dims"]),
            weights=[np.asarray(W, dtype=float).reshape(o, i)
                     for W, i, o in zip(d["weights"], d["layer_dims"][:-1], d["layer_dims"][1:])],
            biases=[np.asarray(b, dtype=float) for b in d["biases"]],
            activation=d.get("activation", "elu"),
            output_activation=bool(d.get("output_activation", False)),
        )


def mlp_init(layer_dims, seed: int, output_activation: bool = False) -> Mlp:
    """Uniform fan-in initialisation with bound sqrt(6 / fan_in); zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"bad layer dims {layer_dims}")
    rng = Rng(seed)
    weights = []
    for i, o in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / i)
        weights.append(rng.uniform(-bound, bound, (o, i)))
    biases = [np.zeros(o) for o in dims[1:]]
    return Mlp(dims, weights, biases, output_activation=output_activation)


def elu(z):
    return np.where(z >= 0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_slope(z):
    return np.where(z >= 0, 1.0, np.exp(np.minimum(z, 0.0)))


def _activated(net: Mlp, layer: int) -> bool:
    return layer < len(net.weights) - 1 or net.output_activation


def mlp_forward(net: Mlp, x, return_cache: bool = False):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != net.layer_dims[0]:
        raise ValueError(f"network expects {net.layer_dims[0]} inputs, got {a.shape[1]}")
    inputs, pre = [], []
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(a)
        z = a @ W.T + b
        pre.append(z)
        a = elu(z) if _activated(net, i) else z
    out = a[0] if single else a
    if return_cache:
        return out, (inputs, pre, single)
    return out


def _backward(net: Mlp, cache, cot):
    inputs, pre, single = cache
    delta = np.asarray(cot, dtype=float)
    delta = delta[None, :] if single else delta
    grads = [None] * (2 * len(net.weights))
    for i in range(len(net.weights) - 1, -1, -1):
        if _activated(net, i):
            delta = delta * _elu_slope(pre[i])
        grads[2 * i] = delta.T @ inputs[i]
        grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ net.weights[i]
    return grads, (delta[0] if single else delta)


def mlp_backward(net: Mlp, x, cot):
    """Gradients of ``sum(cot * net(x))``: ``([dW0, db0, dW1, ...], d input)``."""
    out, cache = mlp_forward(net, x, return_cache=True)
    if np.shape(cot) != np.shape(out):
        raise ValueError(f"cotangent shape {np.shape(cot)} does not match output shape {np.shape(out)}")
    return _backward(net, cache, cot)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, applied in place."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


@dataclass
class TrainConfig:
    batch_size: int = 32
    iterations: int = 1_000_000
    lr_initial: float = 1e-4
    lr_decay_factor: float = 0.5
    lr_decay_every: int = 250_000
    seed: int = 0
    element_subsample: int | None = None
    input_coeff_std: float = 0.3
    log_every: int = 1000

    def __post_init__(self):
        if min(self.batch_size, self.iterations, self.lr_decay_every, self.log_every) < 1 or self.lr_initial <= 0:
            raise ValueError("training sizes and learning rate must be positive")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValueError("learning-rate decay factor must lie in (0, 1]")
        if self.element_subsample is not None and self.element_subsample < 1:
            raise ValueError("element_subsample must be positive")

    def lr(self, iteration: int) -> float:
        return self.lr_initial * self.lr_decay_factor ** (iteration // self.lr_decay_every)

    def to_dict(self) -> dict:
        return asdict(self)


def operator_preset(preset: str, mesh_n: int, num_coeffs: int, seed: int = 0) -> tuple[int, TrainConfig]:
    """Hidden width and training configuration for the operator network.

    ``full`` is the full-scale protocol (widths and batches per mesh,
    10^6 iterations, lr 1e-4 halved every 250k, element subsampling on the
    244x244 mesh).  ``desk`` is the 50k-iteration variant on a 10x10 mesh.
    """
    if preset == "full":
        if mesh_n not in FULL_ARCHITECTURES:
            raise ValueError(f"no full preset for a {mesh_n}x{mesh_n} mesh (have {sorted(FULL_ARCHITECTURES)})")
        width, batch = FULL_ARCHITECTURES[mesh_n]
        sub = FINE_MESH_ELEMENTS.get(num_coeffs) if mesh_n == 244 else None
        return width, TrainConfig(batch_size=batch, iterations=1_000_000, lr_initial=1e-4,
                                  lr_decay_factor=0.5, lr_decay_every=250_000, seed=seed,
                                  element_subsample=sub)
    if preset == "desk":
        width, batch = FULL_ARCHITECTURES.get(mesh_n, FULL_ARCHITECTURES[10])
        return width, TrainConfig(batch_size=batch, iterations=50_000, lr_initial=1e-3,
                                  lr_decay_factor=0.5, lr_decay_every=12_500, seed=seed)
    raise ValueError(f"unknown preset {preset!r}")


# ---------------------------------------------------------------------------
# operator network


def operator_dims(num_coeffs: int, width: int, mesh: Mesh) -> list:
    return [num_coeffs] + [width] * N_HIDDEN + [len(mesh.interior_nodes)]


def assemble_fields(mesh: Mesh, boundary_values, interior_values) -> np.ndarray:
    b = np.atleast_2d(boundary_values)
    V = np.zeros((b.shape[0], mesh.n_nodes))
    V[:, mesh.boundary_nodes] = b
    V[:, mesh.interior_nodes] = np.atleast_2d(interior_values)
    return V


def operator_fields(net: Mlp, pod: PodBasis, mesh: Mesh, coeffs, return_cache: bool = False):
    """Full nodal fields: boundary from ``pod_decode(coeffs)``, interior from the network."""
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    out, cache = mlp_forward(net, coeffs, return_cache=True)
    V = assemble_fields(mesh, pod_decode(pod, coeffs), out)
    return (V, cache) if return_cache else V


def train_operator(mesh: Mesh, pod: PodBasis, width: int, config: TrainConfig, net: Mlp | None = None,
                   callback=None):
    """Minimise the batch-mean energy of the network fields over random coefficient draws.

    Returns ``(net, history)``; ``history`` holds ``(iteration, mean loss)``
    per ``config.log_every`` window.
    """
    if pod.mesh_n is not None and pod.mesh_n != mesh.n:
        raise ValueError(f"POD basis belongs to a {pod.mesh_n}x{pod.mesh_n} mesh, not {mesh.n}x{mesh.n}")
    N = pod.n_modes_kept
    if net is None:
        net = mlp_init(operator_dims(N, width, mesh), seed=config.seed)
    elif net.layer_dims[0] != N or net.layer_dims[-1] != len(mesh.interior_nodes):
        raise ValueError("network dims do not match the POD basis and mesh")
    rng = Rng(config.seed, stream=1)
    state = AdamState.zeros_like(net.params)
    B = config.batch_size
    k = config.element_subsample
    if k is not None and k >= mesh.n_triangles:
        k = None
    interior = mesh.interior_nodes
    history, window = [], []
    for it in range(config.iterations):
        coeffs = rng.normal(0.0, config.input_coeff_std, (B, N))
        V, cache = operator_fields(net, pod, mesh, coeffs, return_cache=True)
        elems = rng.subsets(mesh.n_triangles, k, B) if k is not None else None
        E = nonlinear_energy(mesh, V, elems)
        loss = float(np.mean(E))
        if not math.isfinite(loss):
            raise TrainingDivergence(it)
        dV = nonlinear_energy_grad(mesh, V, elems) / B
        grads, _ = _backward(net, cache, dV[:, interior])
        adam_step(net.params, grads, state, config.lr(it))
        window.append(loss)
        if (it + 1) % config.log_every == 0 or it + 1 == config.iterations:
            history.append((it + 1, float(np.mean(window))))
            log.info("operator it %d  loss %.4e  lr %.2e", it + 1, history[-1][1], config.lr(it))
            window = []
            if callback is not None:
                callback(it + 1, net, history)
    return net, history


def zero_energy_check(net: Mlp, mesh: Mesh, pod: PodBasis) -> float:
    """Energy of the network field for all-zero input (exactly 0 for the true solution operator)."""
    V = operator_fields(net, pod, mesh, np.zeros(pod.n_modes_kept))
    return float(nonlinear_energy(mesh, V[0]))


def validate_operator(net: Mlp, mesh: Mesh, pod: PodBasis, n_problems: int = 1000, seed: int = 0,
                      coeff_std: float = 0.3, newton_tol: float = 1e-10) -> dict:
    """Average absolute and relative network error against Newton solutions."""
    rng = Rng(seed, stream=2)
    coeffs = rng.normal(0.0, coeff_std, (n_problems, pod.n_modes_kept))
    fields = operator_fields(net, pod, mesh, coeffs)
    rows, failed = [], 0
    for a, v in zip(coeffs, fields):
        try:
            u, _ = newton_solve_nonlinear(mesh, pod_decode(pod, a), tol=newton_tol)
        except ConvergenceError as exc:
            log.warning("validation problem skipped: %s", exc)
            failed += 1
            continue
        err = norms(mesh, v - u)
        ref = norms(mesh, u)
        rows.append([
            err["h1_semi"], _ratio(err["h1_semi"], ref["h1_semi"]),
            err["l2"], _ratio(err["l2"], ref["l2"]),
        ])
    if not rows:
        raise ConvergenceError("every validation problem failed")
    avg = np.mean(rows, axis=0)
    return {"h1_abs": avg[0], "h1_rel": avg[1], "l2_abs": avg[2], "l2_rel": avg[3],
            "n_problems": len(rows), "n_failed": failed}


def _ratio(a: float, b: float) -> float:
    if a == 0.0:
        return 0.0
    return a / b


# ---------------------------------------------------------------------------
# autoencoder


@dataclass
class Autoencoder:
    encoder: Mlp
    decoder: Mlp

    def __post_init__(self):
        if self.encoder.layer_dims[-1] != self.decoder.layer_dims[0]:
            raise ValueError("encoder output and decoder input widths differ")
        if self.encoder.layer_dims[0] != self.decoder.layer_dims[-1]:
            raise ValueError("encoder input and decoder output widths differ")

    @property
    def n_latent(self) -> int:
        return self.encoder.layer_dims[-1]

    def encode(self, a):
        return mlp_forward(self.encoder, a)

    def decode(self, z):
        return mlp_forward(self.decoder, z)

    def reconstruct(self, a):
        return self.decode(self.encode(a))


def autoencoder_loss_and_grads(ae: Autoencoder, batch):
    """Mean squared reconstruction error per entry and its parameter gradients."""
    z, enc_cache = mlp_forward(ae.encoder, batch, return_cache=True)
    rec, dec_cache = mlp_forward(ae.decoder, z, return_cache=True)
    r = rec - batch
    loss = float(np.mean(r * r))
    dg, dz = _backward(ae.decoder, dec_cache, 2.0 * r / r.size)
    eg, _ = _backward(ae.encoder, enc_cache, dz)
    return loss, eg + dg


def train_autoencoder(data, n_latent: int, hidden_width: int = 64, config: TrainConfig | None = None):
    """Fit encoder (N, w, n_Z) and decoder (n_Z, w, N) by minibatch Adam.

    ELU follows every layer except the decoder output.  Returns
    ``(autoencoder, train-set MSE per entry, history)``.
    """
    X = np.asarray(getattr(data, "samples", data), dtype=float)
    N = X.shape[1]
    if not 1 <= n_latent < N:
        raise ValueError(f"latent width must lie in [1, {N - 1}], got {n_latent}")
    if config is None:
        config = TrainConfig(batch_size=100, iterations=40_000, lr_initial=1e-3, lr_decay_factor=0.5,
                             lr_decay_every=10_000)
    enc = mlp_init([N, hidden_width, n_latent], seed=config.seed, output_activation=True)
    dec = mlp_init([n_latent, hidden_width, N], seed=config.seed + 1)
    ae = Autoencoder(enc, dec)
    params = enc.params + dec.params
    state = AdamState.zeros_like(params)
    rng = Rng(config.seed, stream=3)
    M = X.shape[0]
    B = min(config.batch_size, M)
    history, window = [], []
    for it in range(config.iterations):
        idx = np.minimum((rng.random(B) * M).astype(np.int64), M - 1)
        loss, grads = autoencoder_loss_and_grads(ae, X[idx])
        if not math.isfinite(loss):
            raise TrainingDivergence(it)
        adam_step(params, grads, state, config.lr(it))
        window.append(loss)
        if (it + 1) % config.log_every == 0 or it + 1 == config.iterations:
            history.append((it + 1, float(np.mean(window))))
            window = []
    rec = ae.reconstruct(X)
    return ae, float(np.mean((rec - X) ** 2)), history


def pca_residual(X, n_keep: int) -> float:
    """Per-entry mean squared residual of the rank-``n_keep`` uncentred PCA reconstruction."""
    X = np.asarray(X, dtype=float)
    s = np.linalg.svd(X, compute_uv=False)
    return float(np.sum(s[n_keep:] ** 2) / X.size)
