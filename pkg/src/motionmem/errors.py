"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: usage problems exit 1,
data/format problems exit 2, numerical failures exit 3.
"""


class InvalidArgumentError(ValueError):
    """An argument violates an operation's precondition."""


class UnsupportedFormatError(ValueError):
    """A file exists but is not in a format this package accepts."""


class DataFormatError(ValueError):
    """A file of an expected format is corrupt, truncated, or mismatched."""


class CapacityError(ValueError):
    """A request exceeds a configured capacity (e.g. decoder max length)."""


class InvalidModeError(ValueError):
    """A requested mode is incompatible with the supplied checkpoint."""


class NumericalFailureError(RuntimeError):
    """Training or checking hit a non-finite value or failed a tolerance."""


class DegenerateQueryWarning(UserWarning):
    """A zero-norm vector reached a cosine similarity; result defined as 0."""
