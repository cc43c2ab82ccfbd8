"""Exception hierarchy shared by every module."""


class GeoDCError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(GeoDCError, ValueError):
    """An argument lies outside the domain of a formula."""


class StabilityError(DomainError):
    """The queue would be unstable (service capacity <= arrival rate)."""


class ConfigError(GeoDCError, ValueError):
    """A configuration or scenario violates its invariants."""


class CertificateError(ConfigError):
    """An efficiency curve fails the convexity certificate."""

    def __init__(self, message, delta=None):
        super().__init__(message)
        self.delta = delta


class FitError(GeoDCError, ValueError):
    """Curve fitting failed (rank deficient or too few samples)."""


class InfeasibleError(GeoDCError):
    """No decision satisfies the constraints of a scenario."""


class PropagationError(GeoDCError):
    """State of charge left its bounds while stepping a slot chain."""


class ConvergenceError(GeoDCError, RuntimeError):
    """An iterative solver exceeded its proven iteration bound."""
