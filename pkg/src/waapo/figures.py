"""Matplotlib report figures rendered to files alongside the delimited output.

These complement the raw PPM rasters: same data, publication-style rendering
with axes, colorbars, and the loss curves. Uses the Agg backend; nothing here
opens a window.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .engine import LossRecord
from .grid import StateGrid
from .metrics import DiffMap


def save_loss_figure(records: Sequence[LossRecord], path) -> None:
    """Loss components and gradient norm over iterations, log scale."""
    fig, (ax, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    its = [r.iteration for r in records]
    for attr, label in (("total", "total"), ("primary", "alignment"), ("linf", "max-norm hinge"), ("ltv", "TV hinge")):
        series = [getattr(r, attr) for r in records]
        if any(v > 0 for v in series):
            ax.semilogy(its, series, label=label)
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(True, alpha=0.3)
    ax2.semilogy(its, [r.grad_norm_preclip for r in records], color="tab:gray")
    ax2.set_ylabel("grad norm (pre-clip)")
    ax2.set_xlabel("iteration")
    ax2.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)


def save_diffmap_figure(dmap: DiffMap, path, clip_quantile: float = 0.99) -> None:
    """Diverging-palette rendering of a difference map with a colorbar."""
    vmax = float(np.quantile(np.abs(dmap.values), clip_quantile))
    if vmax == 0.0:
        vmax = 1.0
    fig, ax = plt.subplots(figsize=(7, 3.8))
    im = ax.imshow(dmap.values, cmap="RdBu_r", vmin=-vmax, vmax=vmax, origin="upper")
    ax.set_title(dmap.label, fontsize=10)
    ax.set_xlabel("longitude cell")
    ax.set_ylabel("latitude cell")
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)


def save_delta_figure(delta: StateGrid, channel_names: Sequence[str], path) -> None:
    """Per-channel panels of the optimized perturbation."""
    n = delta.shape.channels
    cols = min(n, 2)
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(6.5 * cols, 3.2 * rows), squeeze=False)
    vmax = float(np.abs(delta.values).max()) or 1.0
    im = None
    for c in range(rows * cols):
        ax = axes[c // cols][c % cols]
        if c >= n:
            ax.axis("off")
            continue
        im = ax.imshow(delta.values[:, :, c], cmap="RdBu_r", vmin=-vmax, vmax=vmax, origin="upper")
        ax.set_title(f"delta: {channel_names[c]}", fontsize=10)
    if im is not None:
        fig.colorbar(im, ax=[a for row in axes for a in row], shrink=0.8)
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)
