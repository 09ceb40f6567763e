"""Exception hierarchy shared across the package.

``InputError`` marks rejected inputs or violated preconditions (CLI exit
code 2); ``NumericalError`` marks a computation that started but failed to
converge or hit a singular system (CLI exit code 1).
"""


class EnzresError(Exception):
    """Base class for all package-specific errors."""


class InputError(EnzresError):
    """Invalid input data or violated precondition."""


class NumericalError(EnzresError):
    """A numerical procedure failed (singular system, no convergence)."""
