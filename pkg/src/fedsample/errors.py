"""Exception hierarchy shared across the package."""

from __future__ import annotations


class FedSampleError(Exception):
    """Base class for all package errors."""

    stage: str | None = None


class ConfigError(FedSampleError, ValueError):
    """A config file or in-process configuration value is malformed."""


class InfeasibleSampling(FedSampleError, ValueError):
    """A sampling vector cannot meet the convergence threshold."""


class InfeasibleProblem(FedSampleError, ValueError):
    """The sampling optimization has an empty feasible set."""


class InfeasibleM(FedSampleError, ValueError):
    """The requested per-round cost M is outside the reachable interval."""


class PilotTooShort(FedSampleError, RuntimeError):
    """A pilot trace never reached the estimation loss."""


class DegeneratePilot(FedSampleError, RuntimeError):
    """Pilot round counts do not determine positive constants."""


class NonFinite(FedSampleError, FloatingPointError):
    """Training produced a non-finite loss or parameter vector."""
