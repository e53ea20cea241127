"""Exception types shared across the package."""

from __future__ import annotations


class SimpactError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SimpactError, ValueError):
    """Operands have incompatible dimensions."""


class NotPositiveDefiniteError(SimpactError, ValueError):
    """A matrix that must be symmetric positive definite is not."""


class DegenerateNormalsError(SimpactError, ValueError):
    """A set of contact normals is linearly dependent under the metric.

    ``indices`` names the offending subset when it could be identified.
    """

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = tuple(indices)


class CascadeError(SimpactError, RuntimeError):
    """A reflection cascade could not be completed."""


class StepFailureError(SimpactError, RuntimeError):
    """An implicit time step did not converge.

    Carries the last residual norm and iteration count for diagnostics.
    """

    def __init__(self, message, residual_norm=None, iterations=None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations


class ImpactLocationError(SimpactError, RuntimeError):
    """Impact time localization failed (no crossing, or Newton failure)."""


class DesignError(SimpactError, RuntimeError):
    """Design optimization failed (rank collapse or iteration cap)."""


class ConfigError(SimpactError, ValueError):
    """A scenario configuration file is malformed or inconsistent."""


class EnergyGainError(SimpactError, RuntimeError):
    """An impact event produced kinetic energy, which must never happen."""


class VerificationError(SimpactError, AssertionError):
    """A numerical verification helper found an inconsistency."""
