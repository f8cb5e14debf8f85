"""Exception types shared across the package."""


class AssemblyError(ValueError):
    """An entry passed to matrix assembly is out of range or malformed."""


class PartitionMismatchError(ValueError):
    """Two distributed operands do not share the layout the operation requires."""


class OwnershipError(ValueError):
    """A row or column was addressed to a rank that does not own it."""


class StructuralDriftError(RuntimeError):
    """Numeric data no longer matches the structure captured at symbolic time."""


class DeadlockError(RuntimeError):
    """Every live rank is blocked and no message can unblock any of them."""


class MatrixMarketError(ValueError):
    """A Matrix Market file failed to parse; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SizeCapError(ValueError):
    """The dense verification oracle was asked to exceed its size cap."""
