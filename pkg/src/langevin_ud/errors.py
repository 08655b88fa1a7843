"""Exception types shared across the package."""


class DomainError(ValueError):
    """A point lies outside the region where a covariate field is defined.

    Attributes
    ----------
    point : tuple of float or None
        The offending coordinates.
    bounds : tuple of float or None
        ``(xmin, xmax, ymin, ymax)`` of the evaluation domain, if known.
    """

    def __init__(self, message, point=None, bounds=None):
        super().__init__(message)
        self.point = point
        self.bounds = bounds


class NumericalError(RuntimeError):
    """A matrix factorisation or likelihood evaluation broke down."""
