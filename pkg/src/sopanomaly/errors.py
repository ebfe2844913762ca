"""Exception hierarchy shared by all modules."""


class SopAnomalyError(Exception):
    """Base class for every error raised by this package."""


class DataError(SopAnomalyError):
    """Bad or insufficient input data (maps to CLI exit code 2)."""


class SeriesTooShort(DataError):
    pass


class WindowTooShort(DataError):
    pass


class EmptyTrainingSet(DataError):
    pass


class EmptyCalibrationSet(DataError):
    pass


class EmptySet(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(DataError):
    pass


class ShapeMismatch(SopAnomalyError, ValueError):
    pass


class InvalidShape(SopAnomalyError, ValueError):
    pass


class DomainError(SopAnomalyError, ValueError):
    pass


class NonScalarLoss(SopAnomalyError, ValueError):
    pass


class UndefinedMetric(SopAnomalyError, ArithmeticError):
    pass


class OneClassOnly(SopAnomalyError, ValueError):
    pass
