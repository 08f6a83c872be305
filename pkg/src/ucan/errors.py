"""Exception hierarchy shared by every module."""


class UcanError(Exception):
    """Base class for all library errors."""


class ShapeError(UcanError, ValueError):
    pass


class DomainError(UcanError, ValueError):
    """Input outside the mathematical domain of an operation."""


class StateError(UcanError, RuntimeError):
    pass


class NumericError(UcanError, ArithmeticError):
    pass


class DegenerateDataError(DomainError):
    pass


class TrainingDivergedError(NumericError):
    """Raised when a loss checkpoint becomes non-finite; carries the trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class ParseError(UcanError, ValueError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class DataError(UcanError, ValueError):
    pass
