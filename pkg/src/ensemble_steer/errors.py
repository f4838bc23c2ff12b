"""Exception and warning types raised by the library."""


class EnsembleError(Exception):
    """Base class for all library errors."""


class DomainError(EnsembleError, ValueError):
    """A parameter value lies outside the parameter interval."""


class InvalidInputError(EnsembleError, ValueError):
    """Malformed numerical input (non-finite entries, bad sizes, empty sets)."""


class IncompatibleGridError(EnsembleError, ValueError):
    """A signal's time grid does not match the system horizon."""


class IllConditionedGramianError(EnsembleError, ArithmeticError):
    """The block Gramian is singular or too badly conditioned to factor.

    Attributes
    ----------
    condition : float
        Estimated 2-norm condition number (``inf`` when the factorization
        broke down outright).
    """

    def __init__(self, message, condition):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class NotControllableError(EnsembleError, ArithmeticError):
    """The single-moment Gramian W(theta) is not positive definite."""

    def __init__(self, theta, condition):
        super().__init__(
            f"pair (A, B) is not controllable at theta={theta!r} "
            f"(Gramian condition estimate {condition:.3e})"
        )
        self.theta = theta
        self.condition = condition


class DivergenceError(EnsembleError, ArithmeticError):
    """A consensus flow blew up; usually the step size is too large."""


class ConfigError(EnsembleError, ValueError):
    """Schema violation in a system or run configuration file."""

    def __init__(self, message, line=None, source=None):
        where = ""
        if source is not None:
            where = f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line
        self.source = source


class SolverAccuracyWarning(UserWarning):
    """Collocation residual exceeded the accuracy threshold."""
