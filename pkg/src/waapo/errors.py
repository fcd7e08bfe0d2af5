"""Exception types shared across the package."""

from __future__ import annotations


class WaapoError(Exception):
    """Base class for package-specific errors."""


class ShapeError(WaapoError, ValueError):
    """Grids, masks, or model parameters have incompatible shapes."""


class GridFormatError(WaapoError, ValueError):
    """A grid container file is malformed (bad magic, version, or payload)."""


class ConfigError(WaapoError, ValueError):
    """A run configuration failed validation."""


class DivergedError(WaapoError, RuntimeError):
    """The optimization produced a non-finite loss or gradient.

    Carries the failing iteration index and the report accumulated up to the
    last finite iterate, so a crashed run is still diagnosable.
    """

    def __init__(self, iteration: int, message: str, report=None):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
        self.report = report
