"""Targeted perturbation optimization against an autoregressive grid forecaster.

The package is organized as a library plus a ``waapo`` command-line runner:

- ``waapo.grid``       dense lat/lon/channel state grids, masks, norms, TV
- ``waapo.surrogate``  differentiable autoregressive step model with adjoint
- ``waapo.engine``     attack objective, projection, and the optimizer loop
- ``waapo.metrics``    PMRG, alignment/stealth metrics, Gaussian ensembles
- ``waapo.gridfile``   binary grid container I/O
- ``waapo.raster``     PPM/PGM difference-map rendering
- ``waapo.synthetic``  seeded synthetic initial conditions
- ``waapo.config``     run configuration files and experiment presets
- ``waapo.experiment`` end-to-end experiment runner emitting run directories
- ``waapo.cli``        command-line interface

Submodules are imported lazily so that process-level knobs (for example the
``WAAPO_THREADS`` cap applied by the CLI entry point) can take effect before
numerical libraries load.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "grid",
    "surrogate",
    "engine",
    "metrics",
    "gridfile",
    "raster",
    "synthetic",
    "config",
    "experiment",
    "figures",
    "rng",
    "errors",
    "cli",
)

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name: str):
    if name in _SUBMODULES:
        return importlib.import_module(f"{__name__}.{name}")
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
