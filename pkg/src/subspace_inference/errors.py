"""Exception types shared across the package.

The CLI maps these onto process exit codes: ``DimensionError`` and
``ConfigError`` are usage errors, ``DataError`` a data error and
``NumericalError`` a numerical failure.
"""


class SubspaceInferenceError(Exception):
    """Base class for all package errors."""


class ConfigError(SubspaceInferenceError, ValueError):
    pass


class DimensionError(SubspaceInferenceError, ValueError):
    """Array shapes disagree with what the architecture or subspace expects."""

    def __init__(self, what, expected, actual):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected {expected}, got {actual}")


class DataError(SubspaceInferenceError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(SubspaceInferenceError, ArithmeticError):
    """A quantity that must be finite was not.

    ``index`` locates the offending data point and ``step`` the optimizer
    or sampler iteration, whichever applies.
    """

    def __init__(self, message, index=None, step=None):
        self.index = index
        self.step = step
        where = []
        if index is not None:
            where.append(f"index {index}")
        if step is not None:
            where.append(f"step {step}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
