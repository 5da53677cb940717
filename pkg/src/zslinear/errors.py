"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: validation problems exit 2, file
format and I/O problems exit 3, numerical failures exit 4.
"""


class ValidationError(ValueError):
    """Invalid input data, configuration, or dimension mismatch."""


class EmptyClassError(ValidationError):
    """A class referenced by an operation has no samples."""


class DataFormatError(Exception):
    """A file on disk does not conform to its expected format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(ArithmeticError):
    """A numerical routine failed to produce a usable result."""


class ConvergenceError(NumericalError):
    """An iterative routine exhausted its iteration budget."""


class DivergenceError(NumericalError):
    """An optimizer produced a non-finite loss."""


class DegeneratePredictionError(NumericalError):
    """A prediction vector has zero norm, so cosine similarity is undefined."""
