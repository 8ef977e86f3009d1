"""Exception types shared across the package.

Every user-facing failure is one of these, so the CLI can map them to
stable exit codes (validation -> 3, numerical -> 4).
"""


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class NumericalError(ArithmeticError):
    """Raised when a computation produces non-finite or inconsistent values."""


class FormatError(ValidationError):
    """Malformed container file. ``offset`` is the byte position of the problem."""

    def __init__(self, offset: int, message: str):
        self.offset = offset
        super().__init__("byte %d: %s" % (offset, message))
