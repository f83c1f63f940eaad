"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: usage problems exit 1,
data/format problems exit 2, numerical failures exit 3.
"""


class AdahashError(Exception):
    """Base class for all package errors."""

    kind = "data"


class UsageError(AdahashError):
    """Invalid configuration or argument values."""

    kind = "usage"


class FormatError(AdahashError):
    """Corrupt or malformed on-disk input (bad magic, truncation, bad values)."""

    kind = "data"


class DataError(AdahashError):
    """Structurally valid inputs that are semantically inconsistent."""

    kind = "data"


class NumericalError(AdahashError):
    """Non-finite values where finite ones are required (diverged training)."""

    kind = "numeric"
