"""Exception types raised across the package."""


class SimplexCodeError(Exception):
    """Base class for all package errors."""


class AffinelyDependent(SimplexCodeError, ValueError):
    """A codebook or vertex tuple fails the affine-independence rank test."""


class DegenerateFacet(SimplexCodeError, ValueError):
    """Facet-spanning vectors are linearly dependent."""


class InvalidPair(SimplexCodeError, ValueError):
    """A (codebook, vertex tuple) pair violates the containment constraints."""

    def __init__(self, message, validity=None):
        super().__init__(message)
        self.validity = validity


class MethodDimMismatch(SimplexCodeError, ValueError):
    """Estimator method does not apply in the requested dimension."""


class TooFewAcceptedSamples(SimplexCodeError, RuntimeError):
    """Conditional moments requested but too few samples fell in the region."""


class StartOutsideCone(SimplexCodeError, ValueError):
    """Fixed-point start vector is not strictly inside the cone."""


class NonConvergence(SimplexCodeError, RuntimeError):
    """Iteration hit its budget with the residual still above tolerance."""

    def __init__(self, message, result=None, cell=None):
        super().__init__(message)
        self.result = result
        self.cell = cell


class SingularFrame(SimplexCodeError, ValueError):
    """Projected generators are linearly dependent."""


class ConeNotInHalfSpace(SimplexCodeError, ValueError):
    """No certificate that the cone lies strictly inside a half space."""


class TuplesIdentical(SimplexCodeError, ValueError):
    """Two vertex tuples that should differ in their first element do not."""


class LinearDependence(SimplexCodeError, ValueError):
    """A vertex tuple is not linearly independent."""


class OppositeSides(SimplexCodeError, ValueError):
    """The differing vertices lie on opposite sides of the shared facet hyperplane."""
