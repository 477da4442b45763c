"""Exception types shared across the package."""


class DataFormatError(ValueError):
    """A file or text payload violates its documented format."""


class InfeasibleTaskError(ValueError):
    """The dataset cannot supply the requested episode shape."""


class NumericError(ArithmeticError):
    """A numeric invariant was violated, e.g. a loss became non-finite."""


class DegenerateVectorError(NumericError):
    """A vector that must have positive norm is exactly zero."""
