"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a documented precondition or invariant."""


class DegeneracyError(ValueError):
    """A numeric degeneracy that the theory excludes almost surely.

    Raised for exact ties in the nested empirical risks ("non-strict risk
    decrease") and for designs with no usable columns ("degenerate design").
    """
