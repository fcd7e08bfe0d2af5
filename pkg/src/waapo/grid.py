"""Dense multi-channel grid states, spatial masks, norms, and total variation.

Axis convention used everywhere in this package: the first array axis is
latitude (rows), the second is longitude (columns), the third is the channel.
Longitude is topologically a circle, so longitude-coupled operators wrap
around; latitude does not. All values are float64 and are expected to be
finite; grid constructors enforce this.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from numpy.typing import NDArray

from .errors import ShapeError

Array = NDArray[np.float64]


@dataclass(frozen=True)
class GridShape:
    """Grid dimensions: latitude rows, longitude columns, channel count."""

    lat: int
    lon: int
    channels: int

    def __post_init__(self):
        for name in ("lat", "lon", "channels"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    @property
    def cells(self) -> int:
        return self.lat * self.lon * self.channels

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.lat, self.lon, self.channels)


@dataclass(frozen=True)
class StateGrid:
    """One atmospheric state: a dense (lat, lon, channel) array of anomalies.

    Values are stored as normalized anomalies in per-channel units; physical
    unit conversion is an I/O concern. The wrapped array is treated as
    immutable by convention: operations never mutate their inputs and always
    allocate fresh outputs.
    """

    values: Array

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float64)
        if arr.ndim != 3:
            raise ShapeError(f"state grid must be 3-dimensional (lat, lon, channel), got ndim={arr.ndim}")
        if min(arr.shape) < 1:
            raise ShapeError(f"state grid dimensions must all be >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("state grid contains non-finite values")
        object.__setattr__(self, "values", arr)

    @property
    def shape(self) -> GridShape:
        lat, lon, channels = self.values.shape
        return GridShape(lat, lon, channels)

    @classmethod
    def zeros(cls, shape: GridShape) -> "StateGrid":
        return cls(np.zeros(shape.as_tuple()))

    def channel(self, n: int) -> Array:
        """Return the (lat, lon) slice of channel ``n`` (0-based)."""
        _check_channel(self.values, n)
        return self.values[:, :, n]


@dataclass(frozen=True)
class Trajectory:
    """A rollout: the initial state (time index 0) plus forecasts Z_1..Z_T.

    ``states[t-1]`` holds the forecast at time index ``t``; ``at(t)`` resolves
    the full 0..T indexing used by penalty windows, where index 0 is the
    (possibly perturbed) initial state the rollout started from.
    """

    initial: StateGrid
    states: tuple[StateGrid, ...]

    def __post_init__(self):
        states = tuple(self.states)
        if not states:
            raise ValueError("trajectory must contain at least one forecast state")
        shape = self.initial.shape
        for s in states:
            if s.shape != shape:
                raise ShapeError(f"trajectory states disagree on shape: {s.shape} vs {shape}")
        object.__setattr__(self, "states", states)

    @property
    def horizon(self) -> int:
        return len(self.states)

    @property
    def final(self) -> StateGrid:
        return self.states[-1]

    def at(self, t: int) -> StateGrid:
        if not 0 <= t <= self.horizon:
            raise IndexError(f"time index {t} outside [0, {self.horizon}]")
        return self.initial if t == 0 else self.states[t - 1]


@dataclass(frozen=True)
class SpatialMask:
    """Per-cell weight in [0, 1] confining a perturbation to a region.

    Masks are real-valued so smooth (tapered) edges are a mask choice rather
    than a separate code path; a hard patch mask contains only {0, 1}.
    """

    values: Array

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"mask must be 2-dimensional (lat, lon), got ndim={arr.ndim}")
        if not np.isfinite(arr).all():
            raise ValueError("mask contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("mask values must lie in [0, 1]")
        object.__setattr__(self, "values", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    @classmethod
    def ones(cls, lat: int, lon: int) -> "SpatialMask":
        return cls(np.ones((lat, lon)))

    def is_binary(self) -> bool:
        v = self.values
        return bool(np.all((v == 0.0) | (v == 1.0)))


@dataclass(frozen=True)
class ChannelSet:
    """A set of 0-based channel indices selected for perturbation."""

    members: frozenset[int]

    def __init__(self, members: Iterable[int]):
        ms = frozenset(int(m) for m in members)
        for m in ms:
            if m < 0:
                raise IndexError(f"channel index must be nonnegative, got {m}")
        object.__setattr__(self, "members", ms)

    @classmethod
    def all_channels(cls, n: int) -> "ChannelSet":
        return cls(range(n))

    def validate_for(self, channels: int) -> None:
        for m in self.members:
            if m >= channels:
                raise IndexError(f"channel index {m} out of range for {channels} channels")

    def __contains__(self, n: int) -> bool:
        return n in self.members

    def __len__(self) -> int:
        return len(self.members)


def _check_channel(values: Array, n: int) -> None:
    if not 0 <= n < values.shape[2]:
        raise IndexError(f"channel index {n} out of range for {values.shape[2]} channels")


def frobenius_norm(g: StateGrid) -> float:
    """sqrt of the sum of squares over all cells and channels."""
    v = g.values
    return float(np.sqrt(np.sum(v * v)))


def channel_inf_norm(g: StateGrid, n: int) -> float:
    """Max absolute value over the (lat, lon) slice of channel ``n``."""
    return float(np.max(np.abs(g.channel(n))))


def total_variation_2d(v: Array, periodic_lon: bool = True) -> float:
    """Anisotropic L1 total variation of a 2-D field via forward differences.

    Latitude differences are non-periodic; longitude wraps around by default
    (the last column differences against the first).
    """
    tv = float(np.sum(np.abs(v[1:] - v[:-1])))
    if periodic_lon:
        tv += float(np.sum(np.abs(np.roll(v, -1, axis=1) - v)))
    else:
        tv += float(np.sum(np.abs(v[:, 1:] - v[:, :-1])))
    return tv


def total_variation(g: StateGrid, n: int, periodic_lon: bool = True) -> float:
    """Total variation of channel ``n`` of a state grid."""
    return total_variation_2d(g.channel(n), periodic_lon=periodic_lon)


def make_patch_mask(shape: tuple[int, int], origin: tuple[int, int], size: tuple[int, int]) -> SpatialMask:
    """Hard rectangular mask: 1 inside the axis-aligned patch, 0 outside.

    ``origin`` and ``size`` are (lat, lon) cell coordinates; the patch must
    fit inside the grid (no silent clipping).
    """
    lat, lon = shape
    lat0, lon0 = origin
    lat_p, lon_p = size
    if lat_p < 1 or lon_p < 1:
        raise ValueError(f"patch size must be positive, got {size}")
    if lat0 < 0 or lon0 < 0 or lat0 + lat_p > lat or lon0 + lon_p > lon:
        raise ValueError(
            f"patch origin {origin} size {size} exceeds grid bounds ({lat}, {lon})"
        )
    m = np.zeros((lat, lon))
    m[lat0 : lat0 + lat_p, lon0 : lon0 + lon_p] = 1.0
    return SpatialMask(m)


def _dilate8(b: NDArray[np.bool_]) -> NDArray[np.bool_]:
    # 8-connected dilation; periodic in longitude, clamped in latitude.
    out = np.zeros_like(b)
    for r in (b, np.roll(b, 1, axis=1), np.roll(b, -1, axis=1)):
        out |= r
        out[1:] |= r[:-1]
        out[:-1] |= r[1:]
    return out


def smooth_patch_mask(mask: SpatialMask, taper_cells: int) -> SpatialMask:
    """Soften a mask edge with a raised-cosine ramp extending outward.

    Cells inside the mask support keep their values; cells at Chebyshev
    distance d (1 <= d <= taper_cells) from the support get
    0.5 * (1 + cos(pi * d / (taper_cells + 1))), ramping from 1 toward 0
    over the taper band. ``taper_cells = 0`` returns an identical mask.
    """
    if taper_cells < 0:
        raise ValueError(f"taper_cells must be nonnegative, got {taper_cells}")
    if taper_cells == 0:
        return SpatialMask(mask.values.copy())
    out = mask.values.copy()
    reached = mask.values > 0.0
    for d in range(1, taper_cells + 1):
        grown = _dilate8(reached)
        ring = grown & ~reached
        out[ring] = 0.5 * (1.0 + math.cos(math.pi * d / (taper_cells + 1)))
        reached = grown
    return SpatialMask(out)


def apply_mask(g: StateGrid, mask: SpatialMask) -> StateGrid:
    """Multiply every channel of a grid by the spatial mask."""
    if mask.shape != (g.shape.lat, g.shape.lon):
        raise ShapeError(f"mask shape {mask.shape} does not match grid {g.shape.as_tuple()[:2]}")
    return StateGrid(g.values * mask.values[:, :, None] + 0.0)
