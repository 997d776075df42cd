"""Exception hierarchy shared by every iif module."""


class IifError(Exception):
    """Base class for all errors raised by this package."""


class EmptyScores(IifError):
    pass


class InvalidScore(IifError):
    pass


class DuplicateId(IifError):
    pass


class ParseError(IifError):
    def __init__(self, message, line_no=None):
        super().__init__(message if line_no is None else f"line {line_no}: {message}")
        self.line_no = line_no


class BadMagic(IifError):
    pass


class Truncated(IifError):
    pass


class UnsupportedDtype(IifError):
    pass


class IoError(IifError):
    pass


class SchemaMismatch(IifError):
    pass


class EmptyValidation(IifError):
    pass


class NumericalError(IifError):
    pass


class DivergenceDetected(IifError):
    pass


class DimensionTooLarge(IifError):
    pass


class ZeroVector(IifError):
    pass


class MissingScore(IifError):
    pass


class EmptyPoolAfterPrune(IifError):
    pass


class InvalidWeight(IifError):
    pass


class UnknownId(IifError):
    pass


class IdMismatch(IifError):
    pass


class Undefined(IifError):
    pass


class UnsupportedLabels(IifError):
    pass


class NotConverged(IifError):
    def __init__(self, message, grad_norm=None):
        super().__init__(message)
        self.grad_norm = grad_norm
