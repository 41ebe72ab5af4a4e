import numpy as np
import pytest
from hypothesis import settings

from latentuc.mesh import build_unit_square_mesh

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def mesh4():
    return build_unit_square_mesh(4)


@pytest.fixture(scope="session")
def mesh10():
    return build_unit_square_mesh(10)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def desk(mesh10):
    """Desk-scale operator network on the 10x10 mesh with N = 9 Fourier-POD modes (about 75 s)."""
    from latentuc.datagen import sample_fourier_dataset
    from latentuc.neural import operator_preset, train_operator
    from latentuc.pod import fit_pod

    data = sample_fourier_dataset(mesh10, 9, 1000, 42)
    pod = fit_pod(data.samples, mesh_n=10)
    width, cfg = operator_preset("desk", 10, pod.n_modes_kept, seed=0)
    net, history = train_operator(mesh10, pod, width, cfg)
    return {"mesh": mesh10, "pod": pod, "net": net, "history": history, "config": cfg, "width": width}


_CRITERIA = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        _CRITERIA[(number, title)] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[key])
