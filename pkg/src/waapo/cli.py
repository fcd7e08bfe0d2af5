"""Command-line interface.

Verbs: ``run`` (one attack experiment or a seed sweep), ``calibrate``
(per-channel bound calibration), ``grad-check`` (adjoint-vs-finite-difference
oracle), ``ensemble`` (Gaussian baseline), ``render`` (grid file to raster),
``inspect`` (print a grid file header).

Exit codes: 0 success, 2 configuration/usage error, 3 diverged optimization,
4 I/O or file-format error, 1 anything else. Failures print a single
machine-readable JSON object.

The environment variable ``WAAPO_THREADS`` caps internal parallelism: it
bounds sweep worker processes and is propagated to the numerical libraries'
thread-count variables before they load (0 or unset means automatic).

Heavy imports happen inside the handlers so the thread cap can take effect
first.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


def _thread_cap() -> int:
    raw = os.environ.get("WAAPO_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return max(n, 0)


def _apply_thread_cap() -> None:
    n = _thread_cap()
    if n > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, str(n))


def _fail(kind: str, exc: Exception, code: int) -> int:
    print(json.dumps({"error": kind, "message": str(exc)}, sort_keys=True))
    return code


def _load_run_config(args):
    from .config import load_config, preset_config

    if args.config is not None:
        cfg = load_config(args.config)
    else:
        cfg = preset_config(args.preset)
    return cfg.with_overrides(seed=args.seed, out_dir=args.out)


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--preset", choices=choices_from_presets(), help="built-in experiment preset")
    source.add_argument("--config", metavar="PATH", help="run configuration file (INI)")
    parser.add_argument("--seed", type=parse_u64, metavar="U64", help="override the run seed")
    parser.add_argument("--out", metavar="DIR", help="parent directory for run outputs")


def choices_from_presets():
    from .config import PRESET_NAMES

    return PRESET_NAMES


def parse_u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def parse_sweep(text: str) -> tuple[int, int]:
    if not text.startswith("seeds="):
        raise argparse.ArgumentTypeError("expected seeds=A..B")
    lo, sep, hi = text[len("seeds=") :].partition("..")
    if not sep:
        raise argparse.ArgumentTypeError("expected seeds=A..B")
    a, b = int(lo), int(hi)
    if b < a:
        raise argparse.ArgumentTypeError("sweep range must satisfy A <= B")
    return a, b


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="waapo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run one attack experiment (or a seed sweep)")
    _add_config_args(p_run)
    p_run.add_argument("--keep-best", action="store_true", help="return the lowest-loss iterate instead of the last")
    p_run.add_argument(
        "--sampled-denominator",
        type=parse_u64,
        metavar="SEED",
        help="also report PMRG against one concrete Gaussian draw with this seed",
    )
    p_run.add_argument("--sweep", type=parse_sweep, metavar="seeds=A..B", help="run seeds A..B in parallel")

    p_cal = sub.add_parser("calibrate", help="calibrate per-channel bounds from the reference rollout")
    _add_config_args(p_cal)

    p_gc = sub.add_parser("grad-check", help="adjoint gradient vs central finite differences")
    p_gc.add_argument("--lat", type=int, default=8)
    p_gc.add_argument("--lon", type=int, default=8)
    p_gc.add_argument("--channels", type=int, default=2)
    p_gc.add_argument("--horizon", type=int, default=4)
    p_gc.add_argument("--fd-epsilon", type=float, default=1e-4)
    p_gc.add_argument("--tolerance", type=float, default=1e-5)
    p_gc.add_argument("--seed", type=parse_u64, default=0)
    p_gc.add_argument("--out", metavar="PATH", default="gradcheck.json", help="result JSON path (default: gradcheck.json)")

    p_ens = sub.add_parser("ensemble", help="Gaussian initial-condition ensemble baseline")
    _add_config_args(p_ens)
    p_ens.add_argument("--members", type=int, default=16)
    p_ens.add_argument("--sigma", type=float, default=0.3)

    p_render = sub.add_parser("render", help="render a grid file channel (optionally minus another) to PPM/PGM")
    p_render.add_argument("--input", required=True, metavar="GRD")
    p_render.add_argument("--minus", metavar="GRD", help="subtract this grid before rendering")
    p_render.add_argument("--channel", default="0", help="channel name or 0-based index")
    p_render.add_argument("--out", required=True, metavar="PATH")
    p_render.add_argument("--palette", choices=("diverging", "gray"), default="diverging")
    p_render.add_argument("--clip-quantile", type=float, default=0.99)

    p_inspect = sub.add_parser("inspect", help="print a grid file header as JSON")
    p_inspect.add_argument("--input", required=True, metavar="GRD")

    return parser


def _cmd_run(args) -> int:
    from .experiment import run_experiment

    if args.sweep is not None:
        return _cmd_sweep(args)
    cfg = _load_run_config(args)
    run_dir = run_experiment(
        cfg,
        keep_best=args.keep_best,
        sampled_denominator_seed=args.sampled_denominator,
    )
    print(run_dir)
    return EXIT_OK


def _sweep_worker(task: tuple) -> str:
    preset, config_path, seed, out, keep_best, sampled = task
    from .config import load_config, preset_config
    from .experiment import run_experiment

    cfg = load_config(config_path) if config_path else preset_config(preset)
    cfg = cfg.with_overrides(seed=seed, out_dir=out)
    return str(run_experiment(cfg, keep_best=keep_best, sampled_denominator_seed=sampled))


def _cmd_sweep(args) -> int:
    from concurrent.futures import ProcessPoolExecutor

    lo, hi = args.sweep
    seeds = list(range(lo, hi + 1))
    cap = _thread_cap() or (os.cpu_count() or 1)
    workers = max(1, min(cap, len(seeds)))
    tasks = [
        (args.preset, args.config, seed, args.out, args.keep_best, args.sampled_denominator)
        for seed in seeds
    ]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for seed, run_dir in zip(seeds, pool.map(_sweep_worker, tasks)):
            print(f"seed {seed}: {run_dir}")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    from .experiment import run_calibration

    cfg = _load_run_config(args)
    run_dir = run_calibration(cfg)
    print(run_dir / "calibration.json")
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    import numpy as np

    from .engine import PenaltyConfig, TotalLossObjective
    from .grid import GridShape, StateGrid
    from .rng import STREAM_TARGET, philox_stream
    from .surrogate import SurrogateModel, grad_check
    from .synthetic import gen_synthetic_initial

    shape = GridShape(args.lat, args.lon, args.channels)
    model = SurrogateModel.from_seed(shape, args.seed)
    z0 = gen_synthetic_initial(shape, args.seed)
    target = StateGrid(philox_stream(args.seed, STREAM_TARGET).standard_normal(shape.as_tuple()))
    # bounds low enough that both hinges are strictly active, off the kink
    penalties = PenaltyConfig(
        lambda_inf=np.full(shape.channels, 0.05),
        lambda_tv=np.full(shape.channels, 0.04),
        epsilon=np.full(shape.channels, 0.517),
        tau=np.full(shape.channels, 3.013),
    )
    objective = TotalLossObjective(target, penalties, (0, args.horizon - 1))
    error = grad_check(model, z0, args.horizon, objective, fd_epsilon=args.fd_epsilon, seed=args.seed)
    result = {
        "max_rel_error": error,
        "fd_epsilon": args.fd_epsilon,
        "tolerance": args.tolerance,
        "passed": error < args.tolerance,
        "shape": [args.lat, args.lon, args.channels],
        "horizon": args.horizon,
    }
    text = json.dumps(result, sort_keys=True, indent=2)
    from pathlib import Path

    Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK if result["passed"] else 1


def _cmd_ensemble(args) -> int:
    from .experiment import run_ensemble

    cfg = _load_run_config(args)
    run_dir = run_ensemble(cfg, members=args.members, sigma=args.sigma)
    print(run_dir)
    return EXIT_OK


def _resolve_channel(channel: str, names) -> int:
    from .errors import ConfigError

    if channel in names:
        return names.index(channel)
    try:
        idx = int(channel)
    except ValueError:
        raise ConfigError(f"unknown channel {channel!r}; file has {list(names)}") from None
    if not 0 <= idx < len(names):
        raise ConfigError(f"channel index {idx} out of range for {len(names)} channels")
    return idx


def _cmd_render(args) -> int:
    from .gridfile import load_grid
    from .metrics import diff_map
    from .raster import render_diffmap

    grid, names = load_grid(args.input)
    channel = _resolve_channel(args.channel, list(names))
    if args.minus:
        other, _ = load_grid(args.minus)
        label = f"{args.input} - {args.minus} [{names[channel]}]"
        dmap = diff_map(grid, other, channel, label)
    else:
        from .grid import StateGrid
        import numpy as np

        zero = StateGrid(np.zeros(grid.values.shape))
        dmap = diff_map(grid, zero, channel, f"{args.input} [{names[channel]}]")
    render_diffmap(dmap, args.out, palette=args.palette, clip_quantile=args.clip_quantile)
    print(args.out)
    return EXIT_OK


def _cmd_inspect(args) -> int:
    from .gridfile import header_as_json, read_header

    print(header_as_json(read_header(args.input)))
    return EXIT_OK


_HANDLERS = {
    "run": _cmd_run,
    "calibrate": _cmd_calibrate,
    "grad-check": _cmd_grad_check,
    "ensemble": _cmd_ensemble,
    "render": _cmd_render,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from .errors import ConfigError, DivergedError, GridFormatError

    try:
        return _HANDLERS[args.verb](args)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except DivergedError as exc:
        return _fail("diverged", exc, EXIT_DIVERGED)
    except GridFormatError as exc:
        return _fail("format", exc, EXIT_IO)
    except OSError as exc:
        return _fail("io", exc, EXIT_IO)


def entry() -> None:
    _apply_thread_cap()
    sys.exit(main())


if __name__ == "__main__":
    entry()
