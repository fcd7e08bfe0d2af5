"""Seeded synthetic initial conditions standing in for real analysis fields.

Styles:

- ``smooth-random``: per-channel Gaussian noise low-pass filtered by 8 passes
  of the 5-point diffusion kernel (weight 0.2), then normalized to zero mean
  and unit variance per channel. This is the default weather-anomaly stand-in.
- ``zonal-bands``: latitude sine bands (one spatial frequency per channel,
  seeded phase) plus a little smooth noise, same normalization. Useful for
  eyeballing advection in rendered maps.

Fields are bitwise-deterministic per (seed, stream); callers deriving several
independent fields from one run seed pass distinct stream ids (see
``waapo.rng``).
"""

from __future__ import annotations

import numpy as np

from .grid import Array, GridShape, StateGrid
from .rng import STREAM_INITIAL, philox_stream

STYLES = ("smooth-random", "zonal-bands")

_SMOOTH_PASSES = 8
_SMOOTH_WEIGHT = 0.2


def _diffuse(values: Array, passes: int) -> Array:
    v = values
    for _ in range(passes):
        lap = np.roll(v, 1, axis=1) + np.roll(v, -1, axis=1) - 2.0 * v
        lap[1:] += v[:-1] - v[1:]
        lap[:-1] += v[1:] - v[:-1]
        v = v + _SMOOTH_WEIGHT * lap
    return v


def _normalize_channels(values: Array) -> Array:
    mean = values.mean(axis=(0, 1))
    std = values.std(axis=(0, 1))
    std = np.where(std == 0.0, 1.0, std)
    return (values - mean) / std


def gen_synthetic_initial(
    shape: GridShape,
    seed: int,
    style: str = "smooth-random",
    stream: int = STREAM_INITIAL,
) -> StateGrid:
    """Deterministic synthetic state with zero mean, unit variance per channel."""
    if style not in STYLES:
        raise ValueError(f"style must be one of {STYLES}, got {style!r}")
    rng = philox_stream(seed, stream)
    if style == "smooth-random":
        values = _diffuse(rng.standard_normal(shape.as_tuple()), _SMOOTH_PASSES)
    else:
        lat = np.arange(shape.lat)[:, None, None]
        freq = np.arange(1, shape.channels + 1)[None, None, :]
        phase = rng.uniform(0.0, 2.0 * np.pi, size=shape.channels)[None, None, :]
        bands = np.sin(2.0 * np.pi * freq * (lat + 0.5) / shape.lat + phase)
        noise = _diffuse(rng.standard_normal(shape.as_tuple()), _SMOOTH_PASSES)
        values = np.broadcast_to(bands, shape.as_tuple()).copy() + 0.1 * noise
    return StateGrid(_normalize_channels(values))
