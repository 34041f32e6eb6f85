"""Exception and warning types shared across the package."""


class SweepError(Exception):
    """Base class for all package errors."""


class InvalidArgument(SweepError, ValueError):
    """An argument is malformed, non-finite or dimensionally inconsistent."""


class PreconditionViolation(SweepError, ValueError):
    """A documented precondition does not hold for the given data."""


class NumericalFailure(SweepError, RuntimeError):
    """An iterative method failed; ``best`` holds the best iterate found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class NotInCone(SweepError, ValueError):
    """A velocity is not realizable by a nonnegative normal-cone combination."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DomainViolation(SweepError, ValueError):
    """A direction lies outside the domain of a coderivative."""


class ReconstructionFailed(SweepError, RuntimeError):
    """The backward dual system is inconsistent beyond tolerance."""

    def __init__(self, message, residual_profile=None, partial=None):
        super().__init__(message)
        self.residual_profile = residual_profile
        self.partial = partial


class ConfigError(SweepError, ValueError):
    """A configuration file is malformed; ``field`` names the offending entry."""

    def __init__(self, message, field=None, line=None):
        loc = []
        if field is not None:
            loc.append(f"field '{field}'")
        if line is not None:
            loc.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.message = message
        self.field = field
        self.line = line


class ProxRadiusWarning(UserWarning):
    """A projection was requested from outside the prox-regularity radius."""
