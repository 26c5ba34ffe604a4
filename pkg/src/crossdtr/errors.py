"""Exception types shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
SelfCheckError -> 3.
"""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ConfigurationError(ValueError):
    """A configuration value is inconsistent or out of range."""


class UsageError(RuntimeError):
    """An API was called in a way its contract forbids."""


class DataError(ValueError):
    """Input data is malformed or out of the documented range."""


class DegenerateProjectionError(ValueError):
    """A point projects onto the camera's principal plane (|depth| ~ 0)."""


class GenerationError(RuntimeError):
    """Synthetic scene generation could not satisfy its constraints."""


class SelfCheckError(RuntimeError):
    """One or more self-check suites failed."""
