"""Exception taxonomy shared across the package.

Each class maps to one CLI exit code: ValidationError -> 1,
RegimeError / NumericError -> 2, CensoredError -> 3.
"""


class ValidationError(ValueError):
    """Invalid argument or inconsistent configuration."""


class RegimeError(RuntimeError):
    """Parameters outside the regime where the requested object exists."""


class CapacityError(RuntimeError):
    """Requested exact computation exceeds the enumerable state-space budget."""


class SingularChainError(RuntimeError):
    """A chain rate needed by a closed-form expression is zero."""


class UnreachableTargetError(RuntimeError):
    """A hitting-time target cannot be reached (zero rate on the path)."""


class NumericError(RuntimeError):
    """A numerical routine failed to reach its accuracy target."""


class CensoredError(RuntimeError):
    """A statistical run was censored and cannot produce the requested estimate."""
