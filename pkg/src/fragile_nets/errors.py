"""Exception hierarchy shared by all modules."""


class FragileNetsError(Exception):
    """Base class for every error raised by the package."""


class InputError(FragileNetsError):
    """Problems with user-supplied data (CLI exit code 1)."""


class NumericalError(FragileNetsError):
    """A numerical procedure failed or detected an inconsistency (CLI exit code 2)."""


class ParseError(InputError):
    pass


class ValidationError(InputError):
    pass


class DomainError(InputError, ValueError):
    pass


class DimensionMismatch(InputError, ValueError):
    pass


class PositiveEntryError(NumericalError):
    """A max-plus matrix has a finite entry above tolerance, so the Kleene star may diverge."""


class NoExitNodeError(NumericalError):
    pass


class CycleDetectedError(NumericalError):
    pass


class StabilityError(NumericalError):
    pass


class DegenerateMassError(NumericalError):
    pass


class NoConvergenceError(NumericalError):
    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)


class CascadeDetectedError(NumericalError):
    def __init__(self, message, t=None, type_label=None):
        super().__init__(message)
        self.t = t
        self.type_label = type_label


class TotalWipeoutError(NumericalError):
    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class InsufficientDataError(InputError):
    pass
