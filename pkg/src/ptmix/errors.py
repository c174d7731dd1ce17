"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code it maps to.
"""


class PtmixError(Exception):
    exit_code = 1


class ValidationError(PtmixError, ValueError):
    """Bad input: out-of-domain arguments, malformed files, unknown keys."""

    exit_code = 2


class DomainError(ValidationError):
    pass


class NumericalError(PtmixError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class DegenerateComponentError(NumericalError):
    pass


class FitFailure(NumericalError):
    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class SelectionError(NumericalError):
    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class CalibrationError(NumericalError):
    pass
