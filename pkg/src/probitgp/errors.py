class ProbitGPError(Exception):
    """Base class for errors raised by probitgp."""


class ValidationError(ProbitGPError, ValueError):
    """Invalid user input (shapes, duplicates, out-of-range parameters)."""


class NumericalError(ProbitGPError, ArithmeticError):
    """A computation broke down numerically."""


class CholeskyError(NumericalError):
    """Matrix is not positive definite, even after the maximal jitter."""
