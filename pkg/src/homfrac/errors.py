"""Exception types raised across the package."""

from __future__ import annotations


class HomfracError(Exception):
    """Base class for all package errors."""


class ConfigError(HomfracError):
    """Invalid user configuration (bad group file, unknown field name, ...)."""


class UnknownGroup(ConfigError):
    pass


class UnsupportedStep(HomfracError):
    """The algebra has step above the hardcoded BCH order 4."""


class DomainError(HomfracError, ValueError):
    pass


class GaugeGroupMismatch(HomfracError):
    pass


class RootBracketFailure(HomfracError):
    pass


class StepUnderflow(HomfracError):
    pass


class SymmetryViolation(HomfracError):
    pass


class ResourceLimit(HomfracError):
    pass


class ZeroField(HomfracError):
    pass


class NormalizationError(HomfracError):
    pass


class OverlapError(HomfracError):
    pass
