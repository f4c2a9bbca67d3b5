"""Exception hierarchy shared by the library and the command line front end."""


class MSCTError(Exception):
    """Base class for all errors raised by :mod:`msct`."""

    exit_code = 1


class ConfigurationError(MSCTError, ValueError):
    """Inconsistent shapes, geometries or configuration values."""

    exit_code = 2


class NumericalError(MSCTError, ArithmeticError):
    """Non-finite values or a numerical procedure that failed."""

    exit_code = 3


class StepSizeError(NumericalError):
    """Backtracking could not find a step satisfying the descent inequality.

    The partial solver trace is attached as ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class FormatError(MSCTError, OSError):
    """A binary file has a bad magic string, header or truncated payload."""

    exit_code = 4


class PipelineError(MSCTError):
    """A pipeline stage failed; wraps the original error and names the stage."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
