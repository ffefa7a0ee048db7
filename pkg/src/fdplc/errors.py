"""Exception hierarchy.

Every error raised by the package derives from :class:`FdplcError`. The CLI maps
:class:`ValidationError` subclasses to exit code 2 and :class:`NumericalFailure`
subclasses to exit code 3.
"""


class FdplcError(Exception):
    pass


class ValidationError(FdplcError, ValueError):
    """Bad input, configuration or file contents."""


class NumericalFailure(FdplcError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class ConfigError(ValidationError):
    pass


class ConfigMismatch(ValidationError):
    pass


class InputTooShort(ValidationError):
    pass


class InvalidAudio(ValidationError):
    pass


class InvalidMagnitude(ValidationError):
    pass


class NonInvertibleConfig(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class ContractError(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class CorruptBitstream(ValidationError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class FormatError(ValidationError):
    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class DependencyError(ValidationError):
    pass


class DataError(ValidationError):
    pass


class CheckpointError(ValidationError):
    pass


class NumericalError(NumericalFailure):
    pass


class GradError(NumericalFailure):
    def __init__(self, message, parameter=None):
        super().__init__(message)
        self.parameter = parameter
