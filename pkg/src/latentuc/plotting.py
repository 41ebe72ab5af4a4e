"""Matplotlib figures written next to the tabular outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def new_figure(width: float = 4.5, aspect: float = 0.68, **kw):
    with plt.rc_context(STYLE):
        return plt.subplots(figsize=(width, width * aspect), **kw)


def save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        fig.savefig(path)
    plt.close(fig)
    return path


def figure_path(output) -> Path:
    output = Path(output)
    return output.with_suffix(".png")


def plot_series(path, x, series: dict, xlabel: str, ylabel: str, logx=False, logy=False, title=None, marker="o"):
    fig, ax = new_figure()
    for label, y in series.items():
        ax.plot(x, y, marker=marker, ms=3, lw=1, label=label)
    ax.set_xscale("log" if logx else "linear")
    ax.set_yscale("log" if logy else "linear")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend(frameon=False)
    return save(fig, path)


def plot_spectrum(path, values, title=None, floor=None):
    values = np.asarray(values, dtype=float)
    fig, ax = new_figure()
    k = np.arange(1, len(values) + 1)
    ax.semilogy(k, np.maximum(values, np.finfo(float).tiny), "o", ms=3)
    if floor is not None:
        ax.axhline(floor, color="0.5", lw=0.8, ls="--")
    ax.set_xlabel("index")
    ax.set_ylabel("singular value")
    if title:
        ax.set_title(title)
    return save(fig, path)


def plot_convergence(path, h, errors: dict, title=None):
    fig, ax = new_figure()
    h = np.asarray(h, dtype=float)
    for label, e in errors.items():
        ax.loglog(h, e, "o-", ms=3, lw=1, label=label)
    ax.loglog(h, h * errors[next(iter(errors))][-1] / h[-1], color="0.6", lw=0.8, ls=":", label="O(h)")
    ax.set_xlabel("h")
    ax.set_ylabel("error")
    ax.legend(frameon=False)
    if title:
        ax.set_title(title)
    return save(fig, path)


def plot_field(path, mesh, values, omega=None, title=None):
    fig, ax = new_figure(width=3.6, aspect=0.9)
    tpc = ax.tripcolor(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles, values, shading="gouraud", cmap="viridis")
    fig.colorbar(tpc, ax=ax, shrink=0.85)
    if omega is not None:
        ax.add_patch(plt.Circle(omega.center, omega.radius, fill=False, color="w", lw=0.8, ls="--"))
    ax.set_aspect("equal")
    ax.set_xticks([-0.5, 0, 0.5])
    ax.set_yticks([-0.5, 0, 0.5])
    if title:
        ax.set_title(title)
    return save(fig, path)
