"""Exception hierarchy shared by every module of the package."""


class OrbitLimitError(Exception):
    """Base class for all errors raised by orbitlimit."""


class ExprError(OrbitLimitError, ValueError):
    """Problem with a field expression."""


class ParseError(ExprError):
    """Malformed expression source.

    ``position`` is the 0-based character offset at which parsing failed.
    """

    def __init__(self, message, position):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class UnknownIdentifier(ParseError):
    pass


class DomainError(ExprError, ArithmeticError):
    """Evaluation left the domain of an elementary function."""


class StabilityViolation(OrbitLimitError):
    """The stabilizing field fails ``dH(X) > 0`` or the stability residual test."""


class LevelSetError(OrbitLimitError, ValueError):
    """A point that should lie on the energy surface does not."""


class SingularFormError(OrbitLimitError, ValueError):
    """The form matrix is not invertible (misconfigured magnetic term)."""


class IntegrationError(OrbitLimitError):
    """Step-size underflow or non-finite state during integration."""


class ConvergenceError(OrbitLimitError):
    """Newton iteration failed to converge."""


class ResidualError(OrbitLimitError):
    """An orbit violates one of its residual bounds."""


class ChartError(OrbitLimitError):
    """Tubular chart leaves the regular neighbourhood of the surface."""


class SeparationError(OrbitLimitError):
    """The side of the energy surface cannot be decided outside the chart."""


class ContinuationError(OrbitLimitError):
    pass


class LimitSetError(OrbitLimitError):
    pass


class ConfigError(OrbitLimitError, ValueError):
    pass
