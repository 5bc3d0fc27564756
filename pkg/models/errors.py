class CareToolkitError(Exception):
    """Base class for every error raised by the toolkit"""

    exit_code = 1


class UsageError(CareToolkitError):
    """Missing inputs, invalid flags or an invalid run configuration"""

    exit_code = 2


class ParseError(CareToolkitError):
    """Malformed CSV rows or model files"""

    exit_code = 3

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ModelError(CareToolkitError):
    """Behaviour model fitting or validation failed"""

    exit_code = 4


class DegenerateModelError(ModelError):
    pass


class VerticalDirectionError(ModelError):
    pass


class MissingLabelError(ModelError):
    pass


class ModelValidationError(ModelError):
    pass


class SignalError(CareToolkitError):
    """Invalid input to a signal-processing primitive"""

    exit_code = 5


class InvalidFilterSpecError(SignalError):
    pass


class ShortInputError(SignalError):
    pass


class NonUniformSeriesError(SignalError):
    pass


class SimulationError(CareToolkitError):
    """Robot simulation precondition or runtime failure"""

    exit_code = 6


class HandoverTimeoutError(SimulationError):
    pass


class BlockPreconditionError(SimulationError):
    pass


class InvalidPathError(SimulationError):
    pass
