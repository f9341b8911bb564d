"""Exception types shared across the package."""


class EquiflowError(Exception):
    """Base class for all package-specific errors."""


class EvaluationDomainError(EquiflowError):
    """A function or derivative produced a non-finite value."""


class ConfigurationError(EquiflowError):
    """Inconsistent dimensions, unknown names, or invalid settings."""


class SingularMatrixError(EquiflowError):
    """A matrix that must be inverted is singular or too ill-conditioned.

    Carries the offending parameter point in ``point`` when available.
    """

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class DivergenceError(EquiflowError):
    """An integrated trajectory left the finite domain.

    ``step_index`` is the first step at which a non-finite state appeared.
    """

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class ToleranceGapError(EquiflowError):
    """A classification residual landed between the equivariance tolerance
    and the violation threshold, so no crisp verdict is possible."""
