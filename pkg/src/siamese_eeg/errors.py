"""Exception hierarchy shared by every module of the package."""


class SiameseError(Exception):
    """Base class for all package errors."""


class RejectedInputError(SiameseError, ValueError):
    """An argument violates a documented precondition (shape, range, ...)."""


class NumericError(SiameseError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class UsageError(SiameseError, RuntimeError):
    """An API was called out of order, e.g. backward without a forward context."""


class TrainingError(NumericError):
    """Training diverged. ``iteration`` is the 0-based iteration that failed."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class FormatError(SiameseError, ValueError):
    """A binary file does not follow its layout. ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class ValidationError(SiameseError, ValueError):
    """A structurally valid file holds semantically invalid content."""
