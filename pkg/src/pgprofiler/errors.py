"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument or state violates a documented precondition."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values (diverged parameters, bad ratios)."""


class UnsupportedPolicyOperation(TypeError):
    """The requested operation is undefined for this policy family."""
