"""Attack objective, projection operator, and the optimization loop.

The scalar objective is the squared alignment error of the final forecast
against the adversarial target plus two per-channel hinge penalties summed
over a configurable window of trajectory time indices: one on the channel
max-norm (physical bounds) and one on the channel total variation (spatial
smoothness). Time index 0 denotes the perturbed initial state, so the default
window [0, T-1] penalizes the injected perturbation itself as well as the
forecasts it produces.

The optimizer iterates: forward rollout, loss, exact adjoint gradient,
projection of the gradient onto the feasible support, global-L2 clipping,
an Adam update with a scheduled learning rate, and projection of the iterate.
Everything is deterministic: same inputs, same report, bitwise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DivergedError, ShapeError
from .grid import (
    Array,
    ChannelSet,
    SpatialMask,
    StateGrid,
    Trajectory,
    total_variation_2d,
)
from .surrogate import SurrogateModel, adjoint_from_caches, rollout_raw

EPSILON_FLOOR = 1e-12


@dataclass(frozen=True)
class PenaltyConfig:
    """Per-channel hinge penalty weights and bounds.

    A zero weight disables the corresponding penalty for that channel, which
    is how the smoothness ablation is expressed.
    """

    lambda_inf: Array
    lambda_tv: Array
    epsilon: Array
    tau: Array

    def __post_init__(self):
        arrays = {}
        n = None
        for name in ("lambda_inf", "lambda_tv", "epsilon", "tau"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if a.ndim != 1:
                raise ShapeError(f"{name} must be a 1-D per-channel vector")
            if n is None:
                n = a.size
            elif a.size != n:
                raise ShapeError(f"penalty vectors disagree on length: {name} has {a.size}, expected {n}")
            if not np.isfinite(a).all():
                raise ValueError(f"{name} contains non-finite values")
            arrays[name] = a
        if (arrays["lambda_inf"] < 0).any() or (arrays["lambda_tv"] < 0).any():
            raise ValueError("penalty weights must be nonnegative")
        if (arrays["epsilon"] <= 0).any():
            raise ValueError("epsilon bounds must be positive")
        if (arrays["tau"] <= 0).any():
            raise ValueError("tau bounds must be positive")
        for name, a in arrays.items():
            object.__setattr__(self, name, a)

    @property
    def channels(self) -> int:
        return self.epsilon.size

    @classmethod
    def disabled(cls, channels: int) -> "PenaltyConfig":
        """No-op penalties: both weights zero on every channel."""
        return cls(
            lambda_inf=np.zeros(channels),
            lambda_tv=np.zeros(channels),
            epsilon=np.ones(channels),
            tau=np.ones(channels),
        )

    @classmethod
    def uniform(
        cls,
        epsilon: Sequence[float] | Array,
        tau: Sequence[float] | Array,
        *,
        lambda_inf: float = 0.01,
        lambda_tv: float = 0.01,
    ) -> "PenaltyConfig":
        """One scalar weight per penalty, broadcast across channels."""
        eps = np.asarray(epsilon, dtype=np.float64)
        return cls(
            lambda_inf=np.full(eps.size, float(lambda_inf)),
            lambda_tv=np.full(eps.size, float(lambda_tv)),
            epsilon=eps,
            tau=np.asarray(tau, dtype=np.float64),
        )


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam settings, gradient clipping, and the learning-rate schedule."""

    learning_rate: float = 0.01
    max_iterations: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    clip_norm: float | None = 1.0
    schedule: str = "step"
    schedule_decay: float = 0.5
    schedule_every: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 < b < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.adam_epsilon <= 0:
            raise ValueError("adam_epsilon must be positive")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")
        if self.schedule not in ("constant", "step"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "step":
            if not 0.0 < self.schedule_decay <= 1.0:
                raise ValueError("schedule_decay must lie in (0, 1]")
            if self.schedule_every < 1:
                raise ValueError("schedule_every must be >= 1")

    def lr_at(self, iteration: int) -> float:
        if self.schedule == "constant":
            return self.learning_rate
        return self.learning_rate * self.schedule_decay ** (iteration // self.schedule_every)


@dataclass(frozen=True)
class AttackConfig:
    """Everything the optimizer needs besides the model and initial state."""

    channels: ChannelSet
    mask: SpatialMask
    penalties: PenaltyConfig
    optimizer: OptimizerConfig
    horizon: int
    target: StateGrid
    penalty_window: tuple[int, int] | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        shape = self.target.shape
        self.channels.validate_for(shape.channels)
        if self.mask.shape != (shape.lat, shape.lon):
            raise ShapeError(f"mask shape {self.mask.shape} does not match target grid {shape.as_tuple()[:2]}")
        if self.penalties.channels != shape.channels:
            raise ShapeError(
                f"penalty vectors have {self.penalties.channels} channels, target has {shape.channels}"
            )
        window = self.penalty_window
        if window is None:
            window = (0, self.horizon - 1)
        lo, hi = int(window[0]), int(window[1])
        if not (0 <= lo <= hi <= self.horizon):
            raise ValueError(f"penalty window {window} must satisfy 0 <= lo <= hi <= horizon ({self.horizon})")
        object.__setattr__(self, "penalty_window", (lo, hi))


@dataclass(frozen=True)
class LossParts:
    primary: float
    linf: float
    ltv: float

    @property
    def total(self) -> float:
        return (self.primary + self.linf) + self.ltv


@dataclass(frozen=True)
class LossRecord:
    iteration: int
    lr: float
    primary: float
    linf: float
    ltv: float
    total: float
    grad_norm_preclip: float


@dataclass(frozen=True)
class AttackReport:
    """Optimized perturbation plus the diagnostics of the run."""

    delta: StateGrid
    loss_history: tuple[LossRecord, ...]
    final_alignment: float
    baseline_alignment: float
    iterations_run: int

    def __post_init__(self):
        if len(self.loss_history) != self.iterations_run:
            raise ValueError("loss_history length must equal iterations_run")


def _sq_dist(a: Array, b: Array) -> float:
    r = a - b
    return float(np.sum(r * r))


def loss_primary(traj: Trajectory, target: StateGrid) -> float:
    """Squared Frobenius distance between the final forecast and the target."""
    if traj.final.shape != target.shape:
        raise ShapeError(f"trajectory shape {traj.final.shape} does not match target {target.shape}")
    return _sq_dist(traj.final.values, target.values)


def _check_window(window: tuple[int, int], horizon: int) -> tuple[int, int]:
    lo, hi = int(window[0]), int(window[1])
    if not (0 <= lo <= hi <= horizon):
        raise ValueError(f"window {window} outside [0, {horizon}]")
    return lo, hi


def _state_penalty_inf(values: Array, lam: Array, eps: Array) -> float:
    peak = np.max(np.abs(values), axis=(0, 1))
    # fixed-order summation, plain float out
    return float(np.sum(lam * np.maximum(0.0, peak - eps)))


def _state_penalty_tv(values: Array, lam: Array, tau: Array) -> float:
    pen = 0.0
    for n in range(values.shape[2]):
        if lam[n] == 0.0:
            continue
        tv = total_variation_2d(values[:, :, n])
        if tv > tau[n]:
            pen += float(lam[n]) * (tv - float(tau[n]))
    return pen


def penalty_inf(traj: Trajectory, penalties: PenaltyConfig, window: tuple[int, int]) -> float:
    """Hinge sum of channel max-norm excesses over the window."""
    lo, hi = _check_window(window, traj.horizon)
    return sum(
        _state_penalty_inf(traj.at(t).values, penalties.lambda_inf, penalties.epsilon)
        for t in range(lo, hi + 1)
    )


def penalty_tv(traj: Trajectory, penalties: PenaltyConfig, window: tuple[int, int]) -> float:
    """Hinge sum of channel total-variation excesses over the window."""
    lo, hi = _check_window(window, traj.horizon)
    return sum(
        _state_penalty_tv(traj.at(t).values, penalties.lambda_tv, penalties.tau)
        for t in range(lo, hi + 1)
    )


def total_loss(
    traj: Trajectory,
    target: StateGrid,
    penalties: PenaltyConfig,
    window: tuple[int, int],
) -> tuple[float, LossParts]:
    """Primary alignment loss plus both penalties; returns (total, parts)."""
    parts = LossParts(
        primary=loss_primary(traj, target),
        linf=penalty_inf(traj, penalties, window),
        ltv=penalty_tv(traj, penalties, window),
    )
    return parts.total, parts


def _tv_subgradient(v: Array) -> Array:
    # sign convention: d/dx |y - x| = -sign(y - x), with sign(0) = 0.
    g = np.zeros_like(v)
    dv = np.sign(v[1:] - v[:-1])
    g[1:] += dv
    g[:-1] -= dv
    dh = np.sign(np.roll(v, -1, axis=1) - v)
    g += np.roll(dh, 1, axis=1)
    g -= dh
    return g


class TotalLossObjective:
    """Total loss with exact per-state subgradients, for the adjoint sweep.

    Hinges contribute only when strictly violated (subgradient 0 at the
    kink). The max-norm subgradient is assigned to the first row-major cell
    attaining the maximum absolute value.
    """

    def __init__(self, target: StateGrid, penalties: PenaltyConfig, window: tuple[int, int]):
        if penalties.channels != target.shape.channels:
            raise ShapeError("penalty vectors do not match target channel count")
        self.target = target
        self.penalties = penalties
        self.window = (int(window[0]), int(window[1]))

    def parts_for_path(self, path: Sequence[Array]) -> tuple[float, LossParts]:
        horizon = len(path) - 1
        lo, hi = _check_window(self.window, horizon)
        p = self.penalties
        primary = _sq_dist(path[horizon], self.target.values)
        linf = sum(_state_penalty_inf(path[t], p.lambda_inf, p.epsilon) for t in range(lo, hi + 1))
        ltv = sum(_state_penalty_tv(path[t], p.lambda_tv, p.tau) for t in range(lo, hi + 1))
        parts = LossParts(primary=primary, linf=linf, ltv=ltv)
        return parts.total, parts

    def cotangents_for_path(self, path: Sequence[Array]) -> dict[int, Array]:
        horizon = len(path) - 1
        lo, hi = _check_window(self.window, horizon)
        p = self.penalties
        cot: dict[int, Array] = {horizon: 2.0 * (path[horizon] - self.target.values)}
        for t in range(lo, hi + 1):
            u: Array | None = None
            values = path[t]
            for n in range(values.shape[2]):
                if p.lambda_inf[n] > 0.0:
                    sl = values[:, :, n]
                    absn = np.abs(sl)
                    if absn.max() > p.epsilon[n]:
                        i, j = np.unravel_index(int(np.argmax(absn)), sl.shape)
                        if u is None:
                            u = np.zeros_like(values)
                        u[i, j, n] += p.lambda_inf[n] * np.sign(sl[i, j])
                if p.lambda_tv[n] > 0.0:
                    sl = values[:, :, n]
                    if total_variation_2d(sl) > p.tau[n]:
                        if u is None:
                            u = np.zeros_like(values)
                        u[:, :, n] += p.lambda_tv[n] * _tv_subgradient(sl)
            if u is not None:
                cot[t] = cot[t] + u if t in cot else u
        return cot

    # Trajectory-level protocol used by surrogate.grad_check.
    def value(self, traj: Trajectory) -> float:
        path = [traj.at(t).values for t in range(traj.horizon + 1)]
        return self.parts_for_path(path)[0]

    def cotangents(self, traj: Trajectory) -> dict[int, Array]:
        path = [traj.at(t).values for t in range(traj.horizon + 1)]
        return self.cotangents_for_path(path)


def _channel_selector(channels: ChannelSet, n: int) -> Array:
    channels.validate_for(n)
    sel = np.zeros(n)
    sel[sorted(channels.members)] = 1.0
    return sel


def _project_raw(values: Array, maskv: Array, sel: Array) -> Array:
    # + 0.0 normalizes -0.0 products so zeroed cells are bitwise +0.0.
    return values * maskv[:, :, None] * sel[None, None, :] + 0.0


def project(delta: StateGrid, channels: ChannelSet, mask: SpatialMask) -> StateGrid:
    """Zero channels outside the channel set; multiply the rest by the mask.

    Idempotent for hard {0, 1} masks; cells where the mask is zero (and all
    deselected channels) come out bitwise +0.0.
    """
    shape = delta.shape
    if mask.shape != (shape.lat, shape.lon):
        raise ShapeError(f"mask shape {mask.shape} does not match grid {shape.as_tuple()[:2]}")
    sel = _channel_selector(channels, shape.channels)
    return StateGrid(_project_raw(delta.values, mask.values, sel))


def calibrate_constraints(
    model: SurrogateModel, z0: StateGrid, horizon: int
) -> tuple[Array, Array]:
    """Derive per-channel bounds from the unperturbed reference rollout.

    epsilon_n is the max absolute value of channel n over time indices
    0..horizon; tau_n is the mean total variation over the same states.
    Degenerate zero bounds are floored at 1e-12 with a warning so identically
    zero channels do not produce a permanently active hinge.
    """
    path, _ = rollout_raw(model, z0.values, horizon)
    n = model.shape.channels
    eps = np.zeros(n)
    tau = np.zeros(n)
    for values in path:
        eps = np.maximum(eps, np.max(np.abs(values), axis=(0, 1)))
        tau += np.array([total_variation_2d(values[:, :, c]) for c in range(n)])
    tau /= len(path)
    for name, vec in (("epsilon", eps), ("tau", tau)):
        degenerate = vec < EPSILON_FLOOR
        if degenerate.any():
            warnings.warn(
                f"calibration produced zero {name} bounds on channels "
                f"{np.flatnonzero(degenerate).tolist()}; flooring at {EPSILON_FLOOR}",
                stacklevel=2,
            )
            vec[degenerate] = EPSILON_FLOOR
    return eps, tau


def _finish_report(
    model: SurrogateModel,
    z0: StateGrid,
    target: StateGrid,
    horizon: int,
    records: list[LossRecord],
    delta: Array,
    baseline_alignment: float,
) -> AttackReport:
    path, _ = rollout_raw(model, z0.values + delta, horizon)
    return AttackReport(
        delta=StateGrid(delta),
        loss_history=tuple(records),
        final_alignment=_sq_dist(path[-1], target.values),
        baseline_alignment=baseline_alignment,
        iterations_run=len(records),
    )


def waapo_optimize(
    model: SurrogateModel,
    z0: StateGrid,
    config: AttackConfig,
    *,
    keep_best: bool = False,
) -> AttackReport:
    """Run the projected-Adam attack loop and return the optimized delta.

    Starts from delta = 0 and iterates rollout, loss, adjoint gradient,
    gradient projection, global-L2 clipping, Adam, and iterate projection.
    A non-finite loss or gradient aborts with DivergedError (carrying the
    iteration index and the report up to the last finite iterate) unless
    ``keep_best`` is set, in which case the lowest-total-loss iterate seen so
    far is returned; with ``keep_best`` the returned delta is always the
    lowest-total-loss iterate rather than the last one.
    """
    if z0.shape != model.shape:
        raise ShapeError(f"initial state shape {z0.shape} does not match model {model.shape}")
    if config.target.shape != model.shape:
        raise ShapeError(f"target shape {config.target.shape} does not match model {model.shape}")
    opt = config.optimizer
    horizon = config.horizon
    shape = model.shape.as_tuple()
    maskv = config.mask.values
    sel = _channel_selector(config.channels, model.shape.channels)
    objective = TotalLossObjective(config.target, config.penalties, config.penalty_window)

    base_path, _ = rollout_raw(model, z0.values, horizon)
    baseline_alignment = _sq_dist(base_path[-1], config.target.values)

    delta = np.zeros(shape)
    m = np.zeros(shape)
    v = np.zeros(shape)
    records: list[LossRecord] = []
    best_total = math.inf
    best_delta = delta.copy()
    last_finite_delta: Array | None = None

    for k in range(opt.max_iterations):
        lr = opt.lr_at(k)
        # Overflow here is not an error condition: non-finite values are
        # detected below and reported as divergence.
        with np.errstate(over="ignore", invalid="ignore"):
            path, caches = rollout_raw(model, z0.values + delta, horizon)
            total, parts = objective.parts_for_path(path)
        if not math.isfinite(total):
            fallback = best_delta if keep_best else (last_finite_delta if last_finite_delta is not None else np.zeros(shape))
            report = _finish_report(model, z0, config.target, horizon, records, fallback, baseline_alignment)
            if keep_best:
                return report
            raise DivergedError(k, "non-finite loss", report)
        last_finite_delta = delta.copy()
        if total < best_total:
            best_total = total
            best_delta = delta.copy()

        with np.errstate(over="ignore", invalid="ignore"):
            grad = adjoint_from_caches(model, caches, objective.cotangents_for_path(path))
        if not np.isfinite(grad).all():
            fallback = best_delta if keep_best else delta
            report = _finish_report(model, z0, config.target, horizon, records, fallback, baseline_alignment)
            if keep_best:
                return report
            raise DivergedError(k, "non-finite gradient", report)
        grad = _project_raw(grad, maskv, sel)
        gnorm = float(np.sqrt(np.sum(grad * grad)))
        records.append(
            LossRecord(
                iteration=k,
                lr=lr,
                primary=parts.primary,
                linf=parts.linf,
                ltv=parts.ltv,
                total=total,
                grad_norm_preclip=gnorm,
            )
        )
        if opt.clip_norm is not None and gnorm > opt.clip_norm:
            grad = grad * (opt.clip_norm / gnorm)
        t = k + 1
        m = opt.beta1 * m + (1.0 - opt.beta1) * grad
        v = opt.beta2 * v + (1.0 - opt.beta2) * (grad * grad)
        m_hat = m / (1.0 - opt.beta1**t)
        v_hat = v / (1.0 - opt.beta2**t)
        delta = delta - lr * m_hat / (np.sqrt(v_hat) + opt.adam_epsilon)
        delta = _project_raw(delta, maskv, sel)

    final_delta = best_delta if keep_best else delta
    return _finish_report(model, z0, config.target, horizon, records, final_delta, baseline_alignment)


def unconstrained_attack(
    model: SurrogateModel,
    z0: StateGrid,
    target: StateGrid,
    horizon: int,
    optimizer: OptimizerConfig | None = None,
    *,
    keep_best: bool = False,
) -> AttackReport:
    """Attack with every channel open, a full-grid mask, and no penalties."""
    n = model.shape.channels
    config = AttackConfig(
        channels=ChannelSet.all_channels(n),
        mask=SpatialMask.ones(model.shape.lat, model.shape.lon),
        penalties=PenaltyConfig.disabled(n),
        optimizer=optimizer if optimizer is not None else OptimizerConfig(),
        horizon=horizon,
        target=target,
    )
    return waapo_optimize(model, z0, config, keep_best=keep_best)
