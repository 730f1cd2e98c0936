"""Exception types shared across the package."""


class ParseError(ValueError):
    """Malformed input text (carries the 1-based line number)."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class ValidationError(ValueError):
    """Inconsistent arguments or incompatible artifacts."""


class NumericError(RuntimeError):
    """Numerical failure: NaN loss, NaN gradients, non-convergence."""
