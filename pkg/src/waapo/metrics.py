"""Attack-quality and stealth metrics, plus the Gaussian-ensemble baseline.

PMRG (perturbation magnitude ratio relative to Gaussian) divides the
Frobenius norm of a crafted perturbation by the expected norm of a
sigma-scaled unit Gaussian field, sigma * sqrt(lat * lon * channels). The
analytic denominator keeps the reported scalar free of sampling noise; a
sampled variant reproduces the literal ratio against one concrete draw.

Ensemble members draw their noise from per-member Philox streams (see
``waapo.rng``), so serial and parallel execution produce identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import AttackConfig
from .errors import ShapeError
from .grid import (
    Array,
    StateGrid,
    Trajectory,
    frobenius_norm,
    total_variation_2d,
)
from .rng import ENSEMBLE_STREAM_BASE, STREAM_PMRG, philox_stream
from .surrogate import SurrogateModel, rollout


@dataclass(frozen=True)
class EnsembleSpec:
    """Gaussian initial-condition ensemble: scale, member count, seed."""

    sigma: float = 0.3
    members: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        if self.members < 1:
            raise ValueError(f"members must be >= 1, got {self.members}")


@dataclass(frozen=True)
class DiffMap:
    """Pointwise difference of one channel between two states."""

    values: Array
    label: str

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"diff map must be 2-dimensional, got ndim={arr.ndim}")
        if not np.isfinite(arr).all():
            raise ValueError("diff map contains non-finite values")
        if not self.label:
            raise ValueError("diff map label must be non-empty")
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class EnsembleResult:
    members: tuple[Trajectory, ...]
    mean: Trajectory
    control: Trajectory


@dataclass(frozen=True)
class AlignmentMetrics:
    dist_target: float
    dist_ground_truth: float
    control_dist_target: float
    rmse_per_channel_target: tuple[float, ...]
    rmse_per_channel_gt: tuple[float, ...]
    closer_to_target_than_gt: bool
    ratio: float


@dataclass(frozen=True)
class StealthReport:
    nonzero_channels: int
    outside_mask_fraction: float
    outside_mask_energy: float
    channel_inf: tuple[float, ...]
    channel_tv: tuple[float, ...]
    pmrg: float


def pmrg(delta: StateGrid, sigma: float) -> float:
    """||delta||_F / (sigma * sqrt(cells)), the analytic-denominator ratio."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return frobenius_norm(delta) / (sigma * math.sqrt(delta.shape.cells))


def pmrg_sampled(delta: StateGrid, sigma: float, seed: int) -> float:
    """PMRG against one concrete seeded Gaussian draw instead of its
    expectation."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    rng = philox_stream(seed, STREAM_PMRG)
    noise = rng.standard_normal(delta.shape.as_tuple())
    denom = sigma * float(np.sqrt(np.sum(noise * noise)))
    return frobenius_norm(delta) / denom


def gaussian_ensemble(
    model: SurrogateModel,
    z0: StateGrid,
    spec: EnsembleSpec,
    horizon: int,
) -> EnsembleResult:
    """Roll out ``members`` Gaussian-perturbed initial states.

    Member m perturbs with sigma * N(0, 1) noise from the Philox stream
    ``ENSEMBLE_STREAM_BASE + m`` keyed by the spec seed, then rolls out.
    Returns the member trajectories, their per-time mean trajectory, and the
    unperturbed control.
    """
    if z0.shape != model.shape:
        raise ShapeError(f"initial state shape {z0.shape} does not match model {model.shape}")
    control = rollout(model, z0, horizon)
    members = []
    for m in range(spec.members):
        rng = philox_stream(spec.seed, ENSEMBLE_STREAM_BASE + m)
        noise = rng.standard_normal(z0.values.shape)
        members.append(rollout(model, StateGrid(z0.values + spec.sigma * noise), horizon))
    mean_states = []
    for t in range(horizon + 1):
        stacked = np.stack([traj.at(t).values for traj in members])
        mean_states.append(StateGrid(stacked.mean(axis=0)))
    mean = Trajectory(initial=mean_states[0], states=tuple(mean_states[1:]))
    return EnsembleResult(members=tuple(members), mean=mean, control=control)


def rmse(a: StateGrid, b: StateGrid) -> float:
    """Root mean squared difference over every cell and channel."""
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {a.shape} vs {b.shape}")
    r = a.values - b.values
    return float(np.sqrt(np.mean(r * r)))


def _per_channel_rmse(a: Array, b: Array) -> tuple[float, ...]:
    r = a - b
    return tuple(float(x) for x in np.sqrt(np.mean(r * r, axis=(0, 1))))


def alignment_metrics(
    perturbed: Trajectory,
    control: Trajectory,
    target: StateGrid,
    ground_truth: StateGrid,
) -> AlignmentMetrics:
    """Distances of the final forecasts to the target and the ground truth.

    The headline flag says whether the perturbed forecast ended up closer
    (in squared Frobenius distance) to the adversarial target than to the
    ground truth.
    """
    zp = perturbed.final
    zc = control.final
    for other in (zc, target, ground_truth):
        if zp.shape != other.shape:
            raise ShapeError(f"shapes differ: {zp.shape} vs {other.shape}")
    dist_target = float(np.sum((zp.values - target.values) ** 2))
    dist_gt = float(np.sum((zp.values - ground_truth.values) ** 2))
    control_dist_target = float(np.sum((zc.values - target.values) ** 2))
    ratio = dist_target / dist_gt if dist_gt > 0 else math.inf
    return AlignmentMetrics(
        dist_target=dist_target,
        dist_ground_truth=dist_gt,
        control_dist_target=control_dist_target,
        rmse_per_channel_target=_per_channel_rmse(zp.values, target.values),
        rmse_per_channel_gt=_per_channel_rmse(zp.values, ground_truth.values),
        closer_to_target_than_gt=dist_target < dist_gt,
        ratio=ratio,
    )


def diff_map(a: StateGrid, b: StateGrid, channel: int, label: str | None = None) -> DiffMap:
    """Cellwise a - b on one channel."""
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {a.shape} vs {b.shape}")
    values = a.channel(channel) - b.channel(channel)
    return DiffMap(values=values, label=label or f"channel{channel}:a-b")


def stealth_report(delta: StateGrid, config: AttackConfig, sigma: float = 0.3) -> StealthReport:
    """How visible a perturbation is: support, magnitudes, smoothness, PMRG.

    ``outside_mask_fraction`` is the fraction of nonzero delta cells lying
    where the mask support is zero, and ``outside_mask_energy`` the summed
    squares there; both are exactly 0 for any delta the optimizer returns,
    because projection zeroes those cells exactly.
    """
    values = delta.values
    n = values.shape[2]
    nonzero_per_channel = np.count_nonzero(values.reshape(-1, n), axis=0)
    outside = config.mask.values == 0.0
    nonzero_outside = int(np.count_nonzero(values[outside, :]))
    nonzero_total = int(nonzero_per_channel.sum())
    fraction = nonzero_outside / nonzero_total if nonzero_total else 0.0
    energy = float(np.sum(values[outside, :] ** 2))
    return StealthReport(
        nonzero_channels=int(np.count_nonzero(nonzero_per_channel)),
        outside_mask_fraction=fraction,
        outside_mask_energy=energy,
        channel_inf=tuple(float(np.abs(values[:, :, c]).max()) for c in range(n)),
        channel_tv=tuple(total_variation_2d(values[:, :, c]) for c in range(n)),
        pmrg=pmrg(delta, sigma),
    )
