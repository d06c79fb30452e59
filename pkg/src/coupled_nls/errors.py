"""Exception types raised by the solver stack."""


class SolverError(RuntimeError):
    """Base class; ``info`` carries machine-readable diagnostics."""

    def __init__(self, message: str, **info):
        super().__init__(message)
        self.info = info


class NotPositiveDefinite(SolverError):
    """The energy form failed to factor, so the potential floor is violated."""


class SpectrumTooShort(SolverError):
    """lambda lies beyond the computed eigenvalues; increase ``k_max``."""


class ResonanceError(SolverError):
    """lambda coincides with the next eigenvalue within tolerance."""


class GeometryFailure(SolverError):
    """Linking geometry (radii, frozen boundary) could not be established."""


class NotConverged(SolverError):
    """Iteration budget exhausted or line search / Newton failed."""


class DimensionTooLarge(ValueError):
    """Brute-force oracles are restricted to tiny instances."""
