"""Exception and warning types shared across the package."""


class GatebathError(Exception):
    """Base class for all package errors."""


class InvalidSystemError(GatebathError, ValueError):
    pass


class ShapeError(GatebathError, ValueError):
    """Gate or operator arity does not match its qubit list."""


class ChannelValidationError(GatebathError, ValueError):
    """Kraus operators fail the completeness relation."""


class StateValidityError(GatebathError, ValueError):
    """A density matrix has probabilities negative beyond float noise."""


class LeakageError(GatebathError, ValueError):
    """All shots landed outside the one-exciton manifold."""

    def __init__(self, message, counts=None):
        super().__init__(message)
        self.counts = counts


class ParameterError(GatebathError, ValueError):
    pass


class FitError(GatebathError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RankError(GatebathError, ValueError):
    """Calibration points do not determine a line."""


class HeomInstabilityError(GatebathError, FloatingPointError):
    pass


class HierarchyTooLargeError(GatebathError, MemoryError):
    pass


class ConfigError(GatebathError, ValueError):
    pass


class BoundaryWarning(UserWarning):
    """A bounded minimizer stopped at one of its bounds."""


class ExtrapolationWarning(UserWarning):
    pass


class DegenerateFitWarning(UserWarning):
    pass
