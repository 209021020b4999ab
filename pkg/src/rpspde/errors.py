"""Exception types raised across the package."""


class RPSError(Exception):
    """Base class for all package errors."""


class HyperbolicityViolation(RPSError, ValueError):
    """An eigenvalue of the operator is (numerically) zero."""


class NonFiniteResult(RPSError, ArithmeticError):
    """A computation produced inf or nan."""


class InvalidRange(RPSError, ValueError):
    pass


class TruncationTooShort(RPSError, ValueError):
    """The integration horizon cannot meet the requested truncation error."""


class SingularKernel(RPSError, ArithmeticError):
    pass


class NotConverged(RPSError):
    """Picard iteration stopped at ``max_iters`` above tolerance.

    The best iterate and the iteration report are attached so callers can
    still inspect them.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ParseError(RPSError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(RPSError, ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
