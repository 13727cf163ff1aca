"""Exception types raised across the package."""


class HinfnetError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(HinfnetError, ValueError):
    pass


class SingularNoiseMap(HinfnetError, ValueError):
    """A noise covariance ``D D'`` or ``F F'`` is not positive definite."""


class UnknownNodeId(HinfnetError, ValueError):
    pass


class NonSymmetricWeight(HinfnetError, ValueError):
    pass


class UnknownCase(HinfnetError, ValueError):
    pass


class BadDimension(HinfnetError, ValueError):
    pass


class SolverError(HinfnetError, RuntimeError):
    """The interior-point solver stopped without an optimal point."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class Phase1Infeasible(SolverError):
    pass


class InfeasibleInput(HinfnetError, ValueError):
    pass


class RecoveredZbarNotPD(HinfnetError, ValueError):
    pass


class SingularInitialWeight(HinfnetError, ValueError):
    pass


class RiccatiError(HinfnetError, RuntimeError):
    def __init__(self, message, t=None, node=None):
        super().__init__(message)
        self.t = t
        self.node = node


class LostPositivity(RiccatiError):
    pass


class Unbounded(RiccatiError):
    pass


class BadStep(HinfnetError, ValueError):
    pass


class NoConvergence(RiccatiError):
    pass
