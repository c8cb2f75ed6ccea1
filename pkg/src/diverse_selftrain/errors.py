"""Exception types raised across the package."""


class ShapeError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


class SingularMatrixError(ArithmeticError):
    pass


class InsufficientDataError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class InputError(ValueError):
    pass


class LabelError(ValueError):
    pass


class ParseError(ValueError):
    """Malformed input row; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(ValueError):
    pass


class StratificationError(ValueError):
    pass


class PreconditionError(ValueError):
    pass
