"""Exception types raised across the package."""


class ParameterError(ValueError):
    """Inputs have the wrong shape, dimension or an invalid setting."""


class DomainError(ValueError):
    """Inputs are outside the mathematical domain (non-finite, zero vector)."""


class RankError(ArithmeticError):
    """A least-squares problem or point configuration is rank deficient."""


class GeometryError(ValueError):
    """Degenerate planar geometry (coincident or collinear points)."""


class NumericError(ArithmeticError):
    """A numerical routine produced an invalid intermediate result."""
