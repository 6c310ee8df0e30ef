"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: validation problems exit 1,
backend/transport problems exit 2.
"""


class ScentRankError(Exception):
    """Base class for all scentrank errors."""


class ValidationError(ScentRankError):
    """Bad input data, config, or arguments (CLI exit code 1)."""


class BackendError(ScentRankError):
    """A generation or scoring backend failed (CLI exit code 2)."""
