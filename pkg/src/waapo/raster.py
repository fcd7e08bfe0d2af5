"""Difference-map rasters: binary PPM (diverging palette) and PGM (gray).

The color scale is symmetric around zero, clipped at a quantile of the
absolute values so a few extreme cells do not wash out the rest. Zero maps
exactly to the palette midpoint (white in the diverging palette), so an
all-zero map renders as a uniform mid-palette image.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .grid import Array
from .metrics import DiffMap

PALETTES = ("diverging", "gray")


def _normalized(values: Array, clip_quantile: float) -> Array:
    if not 0.0 < clip_quantile <= 1.0:
        raise ValueError(f"clip_quantile must lie in (0, 1], got {clip_quantile}")
    vmax = float(np.quantile(np.abs(values), clip_quantile))
    if vmax == 0.0:
        return np.full(values.shape, 0.5)
    t = np.clip(values / vmax, -1.0, 1.0)
    return (t + 1.0) / 2.0


def _diverging_rgb(u: Array) -> Array:
    # blue (0) -> white (0.5) -> red (1)
    rgb = np.empty(u.shape + (3,))
    low = u <= 0.5
    s = 2.0 * u
    rgb[..., 0] = np.where(low, 255.0 * s, 255.0)
    rgb[..., 1] = np.where(low, 255.0 * s, 255.0 * (2.0 - s))
    rgb[..., 2] = np.where(low, 255.0, 255.0 * (2.0 - s))
    return rgb


def render_diffmap(dmap: DiffMap, path, palette: str = "diverging", clip_quantile: float = 0.99) -> None:
    """Write a diff map as binary PPM (P6) or, for ``gray``, PGM (P5)."""
    if palette not in PALETTES:
        raise ValueError(f"palette must be one of {PALETTES}, got {palette!r}")
    u = _normalized(dmap.values, clip_quantile)
    height, width = u.shape
    if palette == "gray":
        header = f"P5\n{width} {height}\n255\n".encode("ascii")
        pixels = np.rint(255.0 * u).astype(np.uint8)
    else:
        header = f"P6\n{width} {height}\n255\n".encode("ascii")
        pixels = np.rint(_diverging_rgb(u)).astype(np.uint8)
    try:
        Path(path).write_bytes(header + pixels.tobytes())
    except OSError as exc:
        raise OSError(f"failed to write raster {path}: {exc}") from exc
