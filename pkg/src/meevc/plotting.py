"""Optional matplotlib figures written next to the CSV output (``--plot``)."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def conservation_figure(records, path):
    """Relative K and E error, total vorticity error and divergence norm against t."""
    plt = _pyplot()
    t = np.array([r.t for r in records])
    K = np.array([r.K for r in records])
    E = np.array([r.E for r in records])
    W = np.array([r.Wtot for r in records])
    dv = np.array([r.div_norm for r in records])
    fig, axes = plt.subplots(2, 2, figsize=(9, 6.5), constrained_layout=True)
    panels = [
        ((K[0] - K) / K[0] if K[0] else K - K[0], "(K(0) - K(t)) / K(0)"),
        ((E[0] - E) / E[0] if E[0] else E - E[0], "(E(0) - E(t)) / E(0)"),
        (W[0] - W, "W(0) - W(t)"),
        (dv, "||div u_h||"),
    ]
    for ax, (y, label) in zip(axes.flat, panels):
        ax.plot(t, y, lw=1)
        ax.set_xlabel("t")
        ax.set_ylabel(label)
        ax.ticklabel_format(axis="y", style="sci", scilimits=(0, 0))
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def vorticity_figure(omega, path, levels=None):
    """Contours of the vertex values of omega on the unwrapped mesh."""
    plt = _pyplot()
    from matplotlib.tri import Triangulation
    mesh = omega.space.mesh
    vals = omega.coefficients[mesh.vertex_class]
    tri = Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles)
    if levels is None:
        levels = [-6, -5, -4, -3, -2, -1, 1, 2, 3, 4, 5, 6]
    fig, ax = plt.subplots(figsize=(6, 6), constrained_layout=True)
    ax.tricontourf(tri, vals, 40, cmap="RdBu_r")
    lv = [v for v in levels if vals.min() <= v <= vals.max()]
    if lv:
        ax.tricontour(tri, vals, levels=lv, colors="k", linewidths=0.6)
    ax.set_aspect("equal")
    ax.set_title(f"vorticity, t = {omega.time:g}" if omega.time is not None else "vorticity")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def convergence_figure(x, series, path, xlabel):
    """Log-log error curves; ``series`` maps a label to error values."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4.5), constrained_layout=True)
    for label, (xs, ys) in series.items():
        ax.loglog(xs, ys, "o-", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("||u - u_h||_L2")
    ax.grid(True, which="both", lw=0.3)
    ax.legend()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
