"""Exception hierarchy shared by the library and the command line."""


class CvxRegError(Exception):
    """Base class for all errors raised by cvxreg."""

    exit_code = 1
    kind = "error"


class InputError(CvxRegError, ValueError):
    """Malformed, non-finite or otherwise unusable input."""

    kind = "input_error"


class DegenerateInputError(InputError):
    """Input that is well-formed but makes the problem degenerate."""

    kind = "degenerate_input"


class ConfigurationError(InputError):
    """Inconsistent solver, fold or flag settings."""

    kind = "configuration_error"


class FitError(InputError):
    """The design cannot support a fit (e.g. a singular per-point Gram matrix)."""

    kind = "fit_error"


class NumericalFault(CvxRegError, ArithmeticError):
    """A solver produced non-finite values or a subsolver failed to converge."""

    exit_code = 3
    kind = "numerical_fault"
