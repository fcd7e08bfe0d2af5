"""End-to-end experiment runner: config in, self-contained run directory out.

A run directory holds everything needed to reproduce and inspect a run:
the resolved config snapshot, the optimized perturbation and trajectory grid
files, the loss-history CSV, a metrics JSON, difference-map rasters, and
report figures. Metrics JSON and grid files contain no timestamps or paths,
so re-running the same config reproduces them bitwise.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, broadcast_weights, render_config, resolve_channels
from .engine import (
    AttackConfig,
    AttackReport,
    OptimizerConfig,
    PenaltyConfig,
    calibrate_constraints,
    waapo_optimize,
)
from .errors import ConfigError, DivergedError
from .grid import (
    GridShape,
    SpatialMask,
    StateGrid,
    Trajectory,
    make_patch_mask,
    smooth_patch_mask,
)
from .gridfile import load_grid, load_mask, save_grid
from .metrics import (
    EnsembleSpec,
    alignment_metrics,
    diff_map,
    gaussian_ensemble,
    pmrg_sampled,
    rmse,
    stealth_report,
)
from .rng import STREAM_INITIAL, STREAM_TARGET
from .surrogate import SurrogateModel, rollout
from .synthetic import gen_synthetic_initial

LOSS_CSV_COLUMNS = ("iter", "lr", "l_primary", "l_inf", "l_tv", "total", "grad_norm_preclip")


@dataclass(frozen=True)
class ResolvedRun:
    """Runtime objects assembled from a RunConfig."""

    config: RunConfig
    model: SurrogateModel
    z0: StateGrid
    attack: AttackConfig
    calibration: tuple[np.ndarray, np.ndarray] | None


def build_model(cfg: RunConfig) -> SurrogateModel:
    m = cfg.model
    return SurrogateModel.from_seed(
        GridShape(m.lat, m.lon, m.channels),
        m.seed,
        diffusion_weight=m.diffusion_weight,
        nonlinearity_gain=m.nonlinearity_gain,
        coupling_strength=m.coupling_strength,
        advection_shift=m.advection_shift,
    )


def build_mask(cfg: RunConfig, shape: GridShape, base_dir: Path | None = None) -> SpatialMask:
    a = cfg.attack
    if a.mask_file is not None:
        mask = load_mask(_resolve_path(a.mask_file, base_dir))
        if mask.shape != (shape.lat, shape.lon):
            raise ConfigError(f"mask file shape {mask.shape} does not match model grid ({shape.lat}, {shape.lon})")
    elif a.patch_origin is not None:
        mask = make_patch_mask((shape.lat, shape.lon), a.patch_origin, a.patch_size)
    else:
        mask = SpatialMask.ones(shape.lat, shape.lon)
    if a.mask_taper > 0:
        mask = smooth_patch_mask(mask, a.mask_taper)
    return mask


def _resolve_path(path_str: str, base_dir: Path | None) -> Path:
    p = Path(path_str)
    if not p.is_absolute() and base_dir is not None:
        p = base_dir / p
    return p


def _load_state(path, shape: GridShape, what: str) -> StateGrid:
    grid, _ = load_grid(path)
    if grid.shape != shape:
        raise ConfigError(f"{what} file shape {grid.shape.as_tuple()} does not match model {shape.as_tuple()}")
    return grid


def build_states(cfg: RunConfig, model: SurrogateModel, base_dir: Path | None = None) -> tuple[StateGrid, StateGrid]:
    """Initial state and adversarial target, from files or synthesized.

    Without files, the initial state is a seeded smooth-random field and the
    target is the final forecast of a rollout from an independently seeded
    field, so the target is reachable in principle but far from the control.
    """
    a = cfg.attack
    seed = cfg.optimizer.seed
    if a.initial_file is not None:
        z0 = _load_state(_resolve_path(a.initial_file, base_dir), model.shape, "initial")
    else:
        z0 = gen_synthetic_initial(model.shape, seed, stream=STREAM_INITIAL)
    if a.target_file is not None:
        target = _load_state(_resolve_path(a.target_file, base_dir), model.shape, "target")
    else:
        alt = gen_synthetic_initial(model.shape, seed, stream=STREAM_TARGET)
        target = rollout(model, alt, a.horizon).final
    return z0, target


def build_penalties(
    cfg: RunConfig, model: SurrogateModel, z0: StateGrid
) -> tuple[PenaltyConfig, tuple[np.ndarray, np.ndarray] | None]:
    p = cfg.penalties
    n = model.shape.channels
    lam_inf = np.array(broadcast_weights(p.lambda_inf, n))
    lam_tv = np.array(broadcast_weights(p.lambda_tv, n))
    if p.calibrate:
        eps, tau = calibrate_constraints(model, z0, cfg.attack.horizon)
        return PenaltyConfig(lambda_inf=lam_inf, lambda_tv=lam_tv, epsilon=eps, tau=tau), (eps, tau)
    if p.epsilon is None or p.tau is None:
        return PenaltyConfig.disabled(n), None
    return (
        PenaltyConfig(lambda_inf=lam_inf, lambda_tv=lam_tv, epsilon=np.array(p.epsilon), tau=np.array(p.tau)),
        None,
    )


def resolve_run(cfg: RunConfig, base_dir: Path | None = None) -> ResolvedRun:
    model = build_model(cfg)
    mask = build_mask(cfg, model.shape, base_dir)
    z0, target = build_states(cfg, model, base_dir)
    penalties, calibration = build_penalties(cfg, model, z0)
    attack = AttackConfig(
        channels=resolve_channels(cfg.attack, cfg.model.channel_names),
        mask=mask,
        penalties=penalties,
        optimizer=OptimizerConfig(
            learning_rate=cfg.optimizer.learning_rate,
            max_iterations=cfg.optimizer.max_iterations,
            beta1=cfg.optimizer.beta1,
            beta2=cfg.optimizer.beta2,
            adam_epsilon=cfg.optimizer.adam_epsilon,
            clip_norm=cfg.optimizer.clip_norm,
            schedule=cfg.optimizer.schedule,
            schedule_decay=cfg.optimizer.schedule_decay,
            schedule_every=cfg.optimizer.schedule_every,
            seed=cfg.optimizer.seed,
        ),
        horizon=cfg.attack.horizon,
        target=target,
        penalty_window=cfg.attack.penalty_window,
    )
    return ResolvedRun(config=cfg, model=model, z0=z0, attack=attack, calibration=calibration)


def make_run_dir(cfg: RunConfig, parent: Path | None = None) -> Path:
    parent = Path(parent) if parent is not None else Path(cfg.output.directory)
    parent.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = f"{cfg.name}-seed{cfg.optimizer.seed}-{stamp}"
    run_dir = parent / base
    suffix = 0
    while run_dir.exists():
        suffix += 1
        run_dir = parent / f"{base}-{suffix}"
    run_dir.mkdir()
    return run_dir


def _write_loss_csv(path: Path, report: AttackReport) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_CSV_COLUMNS)
        for r in report.loss_history:
            writer.writerow([r.iteration, r.lr, r.primary, r.linf, r.ltv, r.total, r.grad_norm_preclip])


def _write_trajectory(directory: Path, prefix: str, traj: Trajectory, names) -> None:
    directory.mkdir(exist_ok=True)
    save_grid(directory / f"{prefix}_t00.grd", traj.initial, names)
    for t in range(1, traj.horizon + 1):
        save_grid(directory / f"{prefix}_t{t:02d}.grd", traj.at(t), names)


def _metrics_payload(
    resolved: ResolvedRun,
    report: AttackReport,
    perturbed: Trajectory,
    control: Trajectory,
    sampled_denominator_seed: int | None,
) -> dict:
    cfg = resolved.config
    names = cfg.model.channel_names
    target = resolved.attack.target
    ground_truth = control.final  # the surrogate is the world here
    align = alignment_metrics(perturbed, control, target, ground_truth)
    stealth = stealth_report(report.delta, resolved.attack)
    # no preset name, timestamps, or paths in here: the metrics of a run must
    # be bitwise-reproducible from its config snapshot alone
    payload = {
        "run": {
            "seed": cfg.optimizer.seed,
            "horizon": cfg.attack.horizon,
            "channels": sorted(names[c] for c in resolved.attack.channels.members),
        },
        "attack": {
            "baseline_alignment": report.baseline_alignment,
            "final_alignment": report.final_alignment,
            "alignment_ratio_vs_baseline": (
                report.final_alignment / report.baseline_alignment if report.baseline_alignment > 0 else None
            ),
            "iterations_run": report.iterations_run,
        },
        "alignment": {
            "dist_target": align.dist_target,
            "dist_ground_truth": align.dist_ground_truth,
            "control_dist_target": align.control_dist_target,
            "ratio_target_over_gt": align.ratio,
            "closer_to_target_than_gt": align.closer_to_target_than_gt,
            "rmse_per_channel_target": dict(zip(names, align.rmse_per_channel_target)),
            "rmse_per_channel_gt": dict(zip(names, align.rmse_per_channel_gt)),
        },
        "stealth": {
            "nonzero_channels": stealth.nonzero_channels,
            "outside_mask_fraction": stealth.outside_mask_fraction,
            "outside_mask_energy": stealth.outside_mask_energy,
            "channel_inf": dict(zip(names, stealth.channel_inf)),
            "channel_tv": dict(zip(names, stealth.channel_tv)),
            "pmrg": stealth.pmrg,
        },
    }
    if sampled_denominator_seed is not None:
        payload["stealth"]["pmrg_sampled"] = pmrg_sampled(report.delta, 0.3, sampled_denominator_seed)
        payload["stealth"]["pmrg_sampled_seed"] = sampled_denominator_seed
    if resolved.calibration is not None:
        eps, tau = resolved.calibration
        payload["calibration"] = {
            "epsilon": dict(zip(names, (float(x) for x in eps))),
            "tau": dict(zip(names, (float(x) for x in tau))),
        }
    return payload


def _dump_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def run_experiment(
    cfg: RunConfig,
    *,
    keep_best: bool = False,
    sampled_denominator_seed: int | None = None,
    parent_dir: Path | None = None,
    base_dir: Path | None = None,
) -> Path:
    """Execute one configured attack run and write its artifact directory.

    Raises ConfigError for invalid configuration, DivergedError (after
    writing error.json) if the optimization blows up, and OSError for I/O
    failures. Returns the run directory path.
    """
    resolved = resolve_run(cfg, base_dir)
    run_dir = make_run_dir(cfg, parent_dir)
    write_ok = False
    try:
        (run_dir / "config.ini").write_text(render_config(cfg))
        try:
            report = waapo_optimize(resolved.model, resolved.z0, resolved.attack, keep_best=keep_best)
        except DivergedError as exc:
            _dump_json(
                run_dir / "error.json",
                {"error": "diverged", "iteration": exc.iteration, "message": str(exc)},
            )
            raise
        names = cfg.model.channel_names
        save_grid(run_dir / "delta.grd", report.delta, names)
        _write_loss_csv(run_dir / "loss_history.csv", report)

        control = rollout(resolved.model, resolved.z0, cfg.attack.horizon)
        perturbed = rollout(
            resolved.model, StateGrid(resolved.z0.values + report.delta.values), cfg.attack.horizon
        )
        if cfg.output.emit_trajectories:
            tdir = run_dir / "trajectories"
            _write_trajectory(tdir, "control", control, names)
            _write_trajectory(tdir, "perturbed", perturbed, names)

        _dump_json(
            run_dir / "metrics.json",
            _metrics_payload(resolved, report, perturbed, control, sampled_denominator_seed),
        )

        target = resolved.attack.target
        gt = control.final
        report_channels = sorted(resolved.attack.channels.members)
        if cfg.output.emit_rasters:
            from .raster import render_diffmap

            rdir = run_dir / "rasters"
            rdir.mkdir(exist_ok=True)
            for c in report_channels:
                name = names[c]
                render_diffmap(
                    diff_map(perturbed.final, target, c, f"perturbed-vs-target:{name}"),
                    rdir / f"diff_target_{name}.ppm",
                )
                render_diffmap(
                    diff_map(perturbed.final, gt, c, f"perturbed-vs-gt:{name}"),
                    rdir / f"diff_gt_{name}.ppm",
                )
                render_diffmap(
                    diff_map(report.delta, StateGrid.zeros(resolved.model.shape), c, f"delta:{name}"),
                    rdir / f"delta_{name}.ppm",
                )
        if cfg.output.emit_figures:
            from .figures import save_delta_figure, save_diffmap_figure, save_loss_figure

            fdir = run_dir / "figures"
            fdir.mkdir(exist_ok=True)
            if report.loss_history:
                save_loss_figure(report.loss_history, fdir / "loss_history.png")
            for c in report_channels:
                name = names[c]
                save_diffmap_figure(
                    diff_map(perturbed.final, target, c, f"perturbed-vs-target:{name}"),
                    fdir / f"diff_target_{name}.png",
                )
                save_diffmap_figure(
                    diff_map(perturbed.final, gt, c, f"perturbed-vs-gt:{name}"),
                    fdir / f"diff_gt_{name}.png",
                )
            save_delta_figure(report.delta, names, fdir / "delta_channels.png")
        write_ok = True
    finally:
        if not write_ok and not any(run_dir.iterdir()):
            run_dir.rmdir()  # nothing useful was written
    return run_dir


def run_ensemble(
    cfg: RunConfig,
    *,
    members: int = 16,
    sigma: float = 0.3,
    parent_dir: Path | None = None,
    base_dir: Path | None = None,
) -> Path:
    """Gaussian-ensemble baseline run: member RMSE table plus summary JSON."""
    model = build_model(cfg)
    z0, _ = build_states(cfg, model, base_dir)
    horizon = cfg.attack.horizon
    spec = EnsembleSpec(sigma=sigma, members=members, seed=cfg.optimizer.seed)
    result = gaussian_ensemble(model, z0, spec, horizon)

    run_dir = make_run_dir(cfg.with_overrides(), parent_dir)
    member_rmse = [rmse(m.final, result.control.final) for m in result.members]
    mean_rmse = rmse(result.mean.final, result.control.final)
    with (run_dir / "member_rmse.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("member", "rmse_vs_control"))
        for i, value in enumerate(member_rmse):
            writer.writerow([i, value])
    _dump_json(
        run_dir / "ensemble_summary.json",
        {
            "sigma": sigma,
            "members": members,
            "seed": cfg.optimizer.seed,
            "horizon": horizon,
            "mean_rmse_vs_control": mean_rmse,
            "median_member_rmse": float(np.median(member_rmse)),
            "min_member_rmse": min(member_rmse),
            "max_member_rmse": max(member_rmse),
            "mean_tracks_control": mean_rmse < float(np.median(member_rmse)),
        },
    )
    return run_dir


def run_calibration(cfg: RunConfig, *, parent_dir: Path | None = None, base_dir: Path | None = None) -> Path:
    """Write the per-channel calibrated bounds for a config's reference rollout."""
    model = build_model(cfg)
    z0, _ = build_states(cfg, model, base_dir)
    eps, tau = calibrate_constraints(model, z0, cfg.attack.horizon)
    run_dir = make_run_dir(cfg, parent_dir)
    names = cfg.model.channel_names
    _dump_json(
        run_dir / "calibration.json",
        {
            "seed": cfg.optimizer.seed,
            "horizon": cfg.attack.horizon,
            "epsilon": dict(zip(names, (float(x) for x in eps))),
            "tau": dict(zip(names, (float(x) for x in tau))),
        },
    )
    return run_dir
