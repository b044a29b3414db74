"""Exception hierarchy shared by all modules.

The CLI maps :class:`UserError` to exit code 1 and :class:`NumericError`
to exit code 2.
"""


class AgrilendError(Exception):
    """Base class."""


class UserError(AgrilendError, ValueError):
    """Bad input: parameters, files, column names, spec syntax."""


class ParameterDomainError(UserError):
    """A parameter lies outside the domain where the model is defined."""


class SpecSyntaxError(UserError):
    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class NumericError(AgrilendError, ArithmeticError):
    """An iterative method stopped without meeting its tolerance."""

    def __init__(self, message: str, iterations: int | None = None, last_change: float | None = None):
        self.iterations = iterations
        self.last_change = last_change
        extra = []
        if iterations is not None:
            extra.append(f"iterations={iterations}")
        if last_change is not None:
            extra.append(f"last_change={last_change:.3g}")
        super().__init__(message + (f" ({', '.join(extra)})" if extra else ""))


class ConvergenceError(NumericError):
    """Fixed-effect absorption hit its sweep limit."""
