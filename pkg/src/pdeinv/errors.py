"""Exception types shared across the package."""


class PdeInvError(Exception):
    """Base class for all package errors."""


class InvalidMeshError(PdeInvError):
    """Mesh construction input is inconsistent (non-positive widths, bad shapes)."""


class UnsupportedDimensionError(PdeInvError):
    """Requested mesh dimension is not 2 or 3."""


class DimensionMismatchError(PdeInvError):
    """Operands have incompatible shapes."""


class NotSpdError(PdeInvError):
    """Matrix handed to the SPD factorization is not positive definite."""


class BreakdownError(PdeInvError):
    """Krylov iteration hit an exact breakdown (e.g. BiCGSTAB rho ~ 0)."""

    def __init__(self, message, iterations=0):
        super().__init__(message)
        self.iterations = iterations


class SingularPreconditionerError(PdeInvError):
    """Preconditioner cannot be formed (zero diagonal entry)."""


class InvalidCoefficientError(PdeInvError):
    """PDE coefficient violates positivity or shape requirements."""


class InvalidPaddingError(PdeInvError):
    """Absorbing-layer padding exceeds what the mesh can accommodate."""


class ForwardSolveError(PdeInvError):
    """Forward simulation failed to converge; carries the iteration report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class StaleCacheError(PdeInvError):
    """Sensitivity product requested for a model other than the cached one."""


class DistributionError(PdeInvError):
    """A worker refused a batch during static distribution."""

    def __init__(self, message, batch=None, worker=None):
        super().__init__(message)
        self.batch = batch
        self.worker = worker


class StaleAssignmentError(PdeInvError):
    """A worker no longer holds the resident state an assignment refers to."""


class FrozenAssignmentError(PdeInvError):
    """Request violates the frozen batch-to-worker ownership of the current iteration."""


class LineSearchError(PdeInvError):
    """Projected backtracking exhausted its budget without sufficient decrease."""

    def __init__(self, message, backtracks=0):
        super().__init__(message)
        self.backtracks = backtracks


class MetricError(PdeInvError):
    """Scaling metric cannot be computed from the provided timings."""


class ConfigError(PdeInvError):
    """Configuration validation failure; carries the offending field path."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class FormatError(PdeInvError):
    """Binary file header is corrupt or has the wrong magic/version."""
