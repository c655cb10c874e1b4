"""Exception and warning classes shared across colddamp."""


class ColdDampError(Exception):
    """Base class for all errors raised by colddamp."""


class ValidationError(ColdDampError, ValueError):
    """A parameter violates its declared invariant.

    ``field`` names the offending parameter, ``reason`` says why.
    """

    def __init__(self, field, reason):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


class InvalidParameter(ValidationError):
    pass


class UnknownKey(ValidationError):
    pass


class ParseError(ColdDampError, ValueError):
    """Configuration text could not be parsed."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class NoConvergence(ColdDampError, ArithmeticError):
    pass


class EigenFailure(ColdDampError, ArithmeticError):
    pass


class Unstable(ColdDampError, ArithmeticError):
    """Drift matrix has an eigenvalue with non-negative real part."""

    def __init__(self, margin, message=None):
        self.margin = margin
        super().__init__(message or f"system is unstable (stability margin {margin:.3e} >= 0)")


class SingularSystem(ColdDampError, ArithmeticError):
    pass


class ZeroGain(ColdDampError, ValueError):
    pass


class DegenerateFrequencies(ColdDampError, ValueError):
    pass


class NotLinearDispersion(ColdDampError, ValueError):
    pass


class UnequalRates(ColdDampError, ValueError):
    pass


class NonFinite(ColdDampError, ArithmeticError):
    """A stochastic trajectory produced inf/nan values."""

    def __init__(self, message, trajectory=None):
        self.trajectory = trajectory
        super().__init__(message if trajectory is None else f"trajectory {trajectory}: {message}")


class FastCavityWarning(UserWarning):
    """kappa or omega_fb is not well above the mechanical frequencies."""


class MarginallyStableWarning(UserWarning):
    pass


class DispersionWarning(UserWarning):
    """Frequencies only loosely follow a linear dispersion relation."""
