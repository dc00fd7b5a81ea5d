"""Figures for run reports, rendered off-screen to image files."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from bchar.mesh import Mesh  # noqa: E402


def field_image(mesh: Mesh, values) -> tuple[np.ndarray, list[float]]:
    """2D array (y rows, x columns) for imshow, plus its extent.

    3D fields are cut at the middle z layer.
    """
    values = np.asarray(getattr(values, "values", values), dtype=float)
    grid = values.reshape(mesh.dims, order="F")
    if mesh.dim == 3:
        grid = grid[:, :, mesh.dims[2] // 2]
    extent = [mesh.lo[0], mesh.hi[0], mesh.lo[1], mesh.hi[1]]
    return grid.T, extent


def plot_fields(path, mesh: Mesh, fields: Sequence, titles: Sequence[str], vmin=None, vmax=None) -> None:
    """Side-by-side concentration maps sharing one color scale."""
    images = [field_image(mesh, f) for f in fields]
    lo = min(float(im.min()) for im, _ in images) if vmin is None else vmin
    hi = max(float(im.max()) for im, _ in images) if vmax is None else vmax
    fig, axes = plt.subplots(1, len(images), figsize=(4.2 * len(images), 3.8), squeeze=False)
    for ax, (im, extent), title in zip(axes[0], images, titles):
        h = ax.imshow(im, origin="lower", extent=extent, vmin=lo, vmax=hi, cmap="viridis", interpolation="nearest")
        ax.set_title(title)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    fig.colorbar(h, ax=list(axes[0]), shrink=0.85)
    _save(fig, path)


def plot_convergence(path, h: Sequence[float], e1: Sequence[float], e2: Sequence[float], title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(4.8, 3.8))
    ax.loglog(h, e1, "o-", label="E1")
    ax.loglog(h, e2, "s--", label="E2")
    ax.set_xlabel("cell size h")
    ax.set_ylabel("relative error")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    _save(fig, path)


def plot_diagnostics(path, diagnostics) -> None:
    """Per-step mass drift and rebalance error."""
    steps = [d.step for d in diagnostics]
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    ax.semilogy(steps, [max(d.mass_drift, 1e-18) for d in diagnostics], "o-", label="mass drift")
    ax.semilogy(steps, [max(d.rebalance_error, 1e-18) for d in diagnostics], "s-", label="rebalance error")
    ax.set_xlabel("step")
    ax.legend()
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def _save(fig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=110, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
