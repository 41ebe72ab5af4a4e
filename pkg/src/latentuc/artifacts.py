"""File formats: JSON documents, 17-digit CSV tables and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import Dataset
from .inverse import InverseResult, Observation
from .neural import Autoencoder, Mlp
from .pod import PodBasis

FLOAT_FMT = "%.17g"


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # float repr is the shortest string that round-trips, so no digits are lost
    path.write_text(json.dumps(obj, default=_jsonable, indent=1) + "\n")
    return path


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return FLOAT_FMT % x
    return str(x)


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if columns:
            w.writerow(columns)
        for row in rows:
            w.writerow([_cell(x) for x in row])
    return path


def read_csv(path, header: bool = True):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    cols = rows.pop(0) if header else None
    return cols, np.array([[float(x) for x in r] for r in rows])


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(output) -> Path:
    output = Path(output)
    return output.with_name(output.stem + ".manifest.json")


@dataclass
class RunManifest:
    command: str
    params: dict
    seeds: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)      # path -> sha256
    outputs: dict = field(default_factory=dict)     # path -> sha256
    version: str = __version__
    duration_s: float = 0.0
    environment: dict = field(default_factory=lambda: {"python": platform.python_version(),
                                                       "numpy": np.__version__})
    results: dict = field(default_factory=dict)
    _start: float = field(default_factory=time.perf_counter, repr=False)

    def add_input(self, path):
        if path is not None:
            self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path):
        self.outputs[str(path)] = sha256_file(path)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("_start")
        return d

    def finish(self, primary) -> Path:
        self.duration_s = time.perf_counter() - self._start
        return write_json(manifest_path(primary), self.to_dict())


def check_input(manifest_or_none, path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"input file {path} does not exist")
    if manifest_or_none is not None:
        manifest_or_none.add_input(path)


# ---------------------------------------------------------------------------
# domain objects


def save_dataset(path, ds: Dataset) -> tuple[Path, Path]:
    """JSON header next to a CSV with one sample per row."""
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    write_csv(csv_path, None, ds.samples)
    header = {"kind": ds.kind, "mesh_n": ds.mesh_n, "num_coeffs": ds.num_coeffs, "count": ds.count,
              "seed": ds.seed, "noise_std": ds.noise_std, "extra": ds.extra,
              "samples_file": csv_path.name, "samples_sha256": sha256_file(csv_path)}
    write_json(path, header)
    return path, csv_path


def load_dataset(path) -> Dataset:
    path = Path(path)
    h = read_json(path)
    csv_path = path.with_name(h["samples_file"])
    if sha256_file(csv_path) != h.get("samples_sha256", sha256_file(csv_path)):
        raise ValueError(f"{csv_path} does not match the hash recorded in {path}")
    _, X = read_csv(csv_path, header=False)
    if X.shape[0] != h["count"]:
        raise ValueError(f"{csv_path} has {X.shape[0]} rows, header says {h['count']}")
    return Dataset(kind=h["kind"], samples=X, seed=h["seed"], noise_std=h["noise_std"],
                   num_coeffs=h["num_coeffs"], mesh_n=h["mesh_n"], extra=h.get("extra", {}))


def save_pod(path, pod: PodBasis, provenance: dict | None = None) -> Path:
    return write_json(path, {"mesh_n": pod.mesh_n, "N": pod.n_modes_kept, "spectrum": pod.spectrum,
                             "modes": pod.modes, "mean": pod.mean, "provenance": provenance or {}})


def load_pod(path) -> PodBasis:
    d = read_json(path)
    modes = np.asarray(d["modes"], dtype=float)
    if modes.shape[1] != d["N"]:
        raise ValueError(f"{path}: mode array has {modes.shape[1]} columns, N = {d['N']}")
    mean = None if d.get("mean") is None else np.asarray(d["mean"], dtype=float)
    return PodBasis(modes, np.asarray(d["spectrum"], dtype=float), d.get("mesh_n"), mean)


def save_model(path, net: Mlp, training: dict) -> Path:
    return write_json(path, {"kind": "mlp", **net.to_dict(), "training": training})


def load_model(path) -> tuple[Mlp, dict]:
    d = read_json(path)
    if d.get("kind", "mlp") != "mlp":
        raise ValueError(f"{path} is not an MLP model file")
    return Mlp.from_dict(d), d.get("training", {})


def save_autoencoder(path, ae: Autoencoder, training: dict) -> Path:
    return write_json(path, {"kind": "autoencoder", "encoder": ae.encoder.to_dict(),
                             "decoder": ae.decoder.to_dict(), "training": training})


def load_autoencoder(path) -> tuple[Autoencoder, dict]:
    d = read_json(path)
    if d.get("kind") != "autoencoder":
        raise ValueError(f"{path} is not an autoencoder file")
    return Autoencoder(Mlp.from_dict(d["encoder"]), Mlp.from_dict(d["decoder"])), d.get("training", {})


def save_observation(path, obs: Observation) -> Path:
    return write_json(path, obs.to_dict())


def load_observation(path) -> Observation:
    return Observation.from_dict(read_json(path))


def save_result(path, result: InverseResult) -> Path:
    return write_json(path, result.to_dict())
