"""Exception types shared across the package."""


class DualStreamError(Exception):
    """Base class for all package errors."""


class DimensionError(DualStreamError, ValueError):
    """Tensor shapes incompatible for the requested operation."""


class ContractError(DualStreamError, ValueError):
    """A documented precondition was violated by the caller."""


class ConfigError(DualStreamError, ValueError):
    """Invalid, unknown, or inconsistent configuration values."""


class FormatError(DualStreamError, ValueError):
    """Malformed on-disk artifact (corpus, checkpoint, prediction CSV)."""


class MetricError(DualStreamError, ValueError):
    """A metric is undefined for the given inputs."""


class NumericalError(DualStreamError, ArithmeticError):
    """Numerical failure: non-finite loss or a failed gradient check."""
