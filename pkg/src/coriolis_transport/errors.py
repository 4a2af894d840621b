"""Exception types shared across the package."""
from __future__ import annotations


class TransportError(Exception):
    """Base class for all package errors."""


class InvalidParams(TransportError, ValueError):
    """Raised when a constructor or operation receives out-of-range parameters."""


class NoConvergence(TransportError, RuntimeError):
    """Newton inversion of the flow map failed (bad guess or near a singularity)."""


class AtSingularity(TransportError, ArithmeticError):
    """The gradient matrix is evaluated where its determinant has vanished."""


class EmptyWindow(TransportError, ValueError):
    """A scan window has zero or negative extent."""


class VanishingDenominator(TransportError, ArithmeticError):
    """The normalising integral underflowed; the evaluation carries no information."""


class InsufficientSamples(TransportError, RuntimeError):
    """Too few Monte-Carlo paths landed near the target."""


class NotFound(TransportError, RuntimeError):
    """A search (e.g. for a stabilising Coriolis parameter) came up empty."""


class ConfigError(TransportError, ValueError):
    """Malformed or inconsistent run configuration."""
